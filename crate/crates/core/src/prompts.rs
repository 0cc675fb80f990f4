//! Built-in prompt templates. All are overridable through
//! [`PromptOverrides`](crate::config::PromptOverrides).

/// System message for image captioning. The user message carries the image.
pub const CAPTION_SYSTEM: &str = "You describe images for a technical search engine. \
Write a dense, faithful description of everything in the image that a domain expert \
would need to understand it: the kind of figure, every axis, label, legend, unit and \
value, symbols and equations, code or terminal text transcribed exactly, chemical or \
molecular structures, circuit components and their connections, interface elements, \
and the overall structure and relationships shown. Do not speculate beyond what is \
visible and do not answer any question about the image.";

/// System message for query expansion. The user message is the combined input.
pub const EXPAND_SYSTEM: &str = "Provide an extensive elaboration on the user's inquiry, \
covering the problem itself and the surrounding context. (1) Analyze: break down the \
question into its fundamental components. (2) Contextualize: identify relevant background \
concepts and common scenarios. (3) Explore: describe various solution directions and \
pertinent information, mentioning specific terms and ideas. (4) Synthesize: weave all of \
this into a coherent and detailed piece of writing dense with relevant information and \
terminology.";

/// System message for chain-of-thought reranking. `{k1}` is substituted with
/// the number of indices requested.
pub const RERANK_SYSTEM: &str = "You are an expert relevance assessor. You will be given a \
search query and a numbered list of candidate documents, each labeled with a bracketed \
index such as [1]. First, identify the essential problem the query is asking about. Then \
reason step by step about why each document is relevant or irrelevant to that problem. \
Finally, output the indices of the {k1} most relevant documents, from most to least \
relevant, on the last line in the format [i] > [j] > [k] and nothing else on that line.";

/// Prefix joining the question and the caption in the combined input.
pub const IMAGE_DESCRIPTION_PREFIX: &str = "Image Description: ";

pub(crate) fn render_rerank_system(template: &str, k1: usize) -> String {
    template.replace("{k1}", &k1.to_string())
}

/// Truncates to at most `max_chars` characters on a char boundary.
pub(crate) fn truncate_chars(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}

/// Builds the rerank user message: the query followed by `[i] text` lines.
pub(crate) fn render_rerank_user<'a>(
    query_text: &str,
    docs: impl IntoIterator<Item = &'a str>,
    k1: usize,
    max_doc_chars: usize,
) -> String {
    let mut out = String::new();
    out.push_str("Query:\n");
    out.push_str(query_text);
    out.push_str("\n\nDocuments:\n");
    let mut n = 0;
    for (i, doc) in docs.into_iter().enumerate() {
        n += 1;
        let flat: String = truncate_chars(doc, max_doc_chars)
            .chars()
            .map(|c| if c == '\n' { ' ' } else { c })
            .collect();
        out.push_str(&format!("[{}] {}\n", i + 1, flat));
    }
    out.push_str(&format!(
        "\nRank the top {} of these {} documents. End with a single line of the form [i] > [j] > ...",
        k1.min(n),
        n
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_respects_char_boundaries() {
        assert_eq!(truncate_chars("héllo", 2), "hé");
        assert_eq!(truncate_chars("abc", 10), "abc");
        assert_eq!(truncate_chars("abc", 0), "");
    }

    #[test]
    fn rerank_user_message_labels_documents_from_one() {
        let msg = render_rerank_user("why?", ["first doc", "second\ndoc"], 1, 1000);
        assert!(msg.contains("[1] first doc\n"));
        assert!(msg.contains("[2] second doc\n"));
        assert!(msg.contains("top 1 of these 2"));
    }

    #[test]
    fn rerank_system_substitutes_k1() {
        assert!(render_rerank_system(RERANK_SYSTEM, 10).contains("the 10 most relevant"));
    }
}
