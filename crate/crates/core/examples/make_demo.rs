//! Writes the bundled offline fixture set.
//!
//! ```text
//! cargo run -p expandrank --example make_demo -- fixtures/demo
//! ```
//!
//! Ten queries over fifty documents in two domains. Each query has two
//! relevant documents and three distractors that share its surface wording
//! but not its subject. Caption and expansion fixtures carry the topical
//! vocabulary, so retrieval improves as stages are added. The oracle rerank
//! fixture puts the relevant documents first in the retrieval order of the
//! default configuration; the identity fixture keeps that order.

use std::path::PathBuf;
use std::sync::Arc;

use expandrank::ingest::{format_qrels, write_atomic, write_corpus, write_jsonl, write_queries};
use expandrank::llm::{FixtureRecord, LlmClient, MockBackend, TAG_CAPTION, TAG_EXPAND, TAG_RERANK};
use expandrank::{Corpus, Document, Engine, PipelineConfig, Qrels, Query};

pub const HASHING_DIM: usize = 256;

struct Topic {
    domain: &'static str,
    question: &'static str,
    caption: &'static str,
    expansion: &'static str,
    relevant: [&'static str; 2],
    distractors: [&'static str; 3],
}

const TOPICS: [Topic; 10] = [
    Topic {
        domain: "earth-science",
        question: "Why does the solid stuff in my drink stay at the top instead of sinking?",
        caption: "A clear glass of water with several ice cubes floating at the surface, partly above the waterline.",
        expansion: "Ice floats on liquid water because frozen water is less dense. When water freezes, hydrogen bonds lock molecules into an open hexagonal crystal lattice that occupies more volume, so ice density is about 0.92 grams per cubic centimeter versus 1.0 for liquid water. By Archimedes' principle the buoyancy force equals the weight of displaced water, so roughly ninety percent of an ice cube sits below the waterline. This density anomaly also explains why lakes freeze from the top down.",
        relevant: [
            "Ice is less dense than liquid water because hydrogen bonds arrange frozen water molecules in an open hexagonal lattice, so ice floats and lakes freeze from the top down.",
            "Archimedes' principle: a floating body displaces its own weight of fluid. Ice with density 0.92 floats with about ninety percent of its volume below the waterline.",
        ],
        distractors: [
            "Stir the drink before serving so the syrup at the bottom mixes with the top layer instead of sinking.",
            "Why does my sourdough stay flat? Solid starter stuff and sinking dough explained.",
            "Choose a solid glass for hot drinks; thin glass may crack instead of staying intact on top of the stove.",
        ],
    },
    Topic {
        domain: "earth-science",
        question: "What is coming out of the mountain in this picture and why is it glowing?",
        caption: "A volcano erupting at night, with bright orange lava flowing down its slope and an ash plume above the crater.",
        expansion: "The image shows a volcanic eruption. Magma is molten rock stored in a magma chamber beneath the volcano; once it reaches the surface it is called lava. Lava glows because it is extremely hot, around 700 to 1200 degrees Celsius, and hot matter emits thermal radiation, incandescence, in the visible range. Basaltic lava is runny and forms lava flows, while silica-rich magma traps gas and erupts explosively producing ash plumes and pyroclastic material.",
        relevant: [
            "Lava is magma that reaches the surface during a volcanic eruption. Basaltic lava at 1100 to 1200 degrees Celsius glows orange through incandescence, emitting thermal radiation.",
            "Silica-rich magma is viscous and traps dissolved gas, so the volcano erupts explosively, producing ash plumes, pyroclastic flows and volcanic bombs from the crater.",
        ],
        distractors: [
            "Mountain photography at night: how to keep stars glowing in the picture without a tripod.",
            "Why is my phone screen glowing after I turn it off? Coming out of sleep mode explained.",
            "This mountain bike trail picture shows what coming down a steep slope looks like.",
        ],
    },
    Topic {
        domain: "earth-science",
        question: "Why is the water so far away from the beach in this photo compared to this morning?",
        caption: "A wide sandy beach at low tide with boats resting on wet sand and the sea far from the shore.",
        expansion: "The difference is the tide. Ocean tides are caused by the gravitational pull of the Moon and, to a lesser degree, the Sun. The Moon's gravity creates two tidal bulges on opposite sides of Earth, and as Earth rotates a coast passes through high tide and low tide roughly twice a day, about every 12 hours 25 minutes. Spring tides with the largest tidal range occur at new and full moon when Sun and Moon align; neap tides occur at quarter moons.",
        relevant: [
            "Tides result from the Moon's gravitational pull creating two tidal bulges; coasts experience high tide and low tide about every 12 hours 25 minutes as Earth rotates.",
            "Spring tides with the largest tidal range happen when the Sun and Moon align at new and full moon; neap tides with a small range occur at quarter moons.",
        ],
        distractors: [
            "Beach photo tips: shoot in the morning so the water looks calm and far away horizons stay sharp.",
            "How far away should you park from the beach? Morning parking rules compared.",
            "Water from this morning's rain is still so far from draining in the photo of my yard.",
        ],
    },
    Topic {
        domain: "earth-science",
        question: "How do these colors appear in the sky after it rains?",
        caption: "A double rainbow arching over a green field under dark clouds, with a brighter primary bow and a fainter secondary bow.",
        expansion: "A rainbow forms when sunlight enters raindrops and undergoes refraction, internal reflection and dispersion. Each wavelength bends by a slightly different angle, so white light splits into a spectrum from red to violet. The primary bow appears at about 42 degrees from the antisolar point after one internal reflection; the secondary bow at about 51 degrees involves two reflections, which reverses its color order and makes it fainter.",
        relevant: [
            "Rainbows form by refraction, one internal reflection and dispersion of sunlight in raindrops; the primary bow appears 42 degrees from the antisolar point with red on the outside.",
            "A secondary rainbow at about 51 degrees results from two internal reflections inside raindrops, so its spectrum order is reversed and it is fainter.",
        ],
        distractors: [
            "How to choose paint colors that appear bright in a room with little sky light.",
            "After it rains, clean the gutters so these leaves do not clog the downspout.",
            "Sky colors at sunset: photographers explain how these colors appear after editing.",
        ],
    },
    Topic {
        domain: "earth-science",
        question: "Why is the river in this picture brown and why does it curve like that?",
        caption: "Aerial view of a muddy brown river winding in wide meanders through a flat floodplain, with sandbars on the inner bends.",
        expansion: "The brown color comes from suspended sediment: fine silt and clay eroded from the watershed and carried by the current. Meandering rivers curve because flow is faster on the outer bank of a bend, causing erosion there, while slower water on the inner bank deposits sediment as point bars. Over time the bends migrate across the floodplain, and oxbow lakes form when a meander neck is cut off.",
        relevant: [
            "Meanders develop as faster flow erodes the outer bank of a bend while slower water deposits sediment as point bars on the inner bank; cut-off meanders leave oxbow lakes on the floodplain.",
            "Rivers look brown because of suspended sediment load, fine silt and clay eroded from the watershed and carried by turbulent current.",
        ],
        distractors: [
            "Brown paint for picture frames: why this curve detail is popular in rustic decor.",
            "River cruise picture gallery: the brown boats and curving decks of classic cruisers.",
            "Why does my lawn turn brown in summer like the grass in this picture?",
        ],
    },
    Topic {
        domain: "software",
        question: "My program crashes with the message in this screenshot, what does it mean?",
        caption: "Terminal screenshot showing 'Segmentation fault (core dumped)' after running ./server, with a gdb backtrace pointing at a null pointer dereference in parse_header.",
        expansion: "A segmentation fault means the process accessed memory it is not allowed to, and the kernel sent SIGSEGV. Common causes are dereferencing a null pointer, using a dangling pointer after free, or a buffer overflow past the end of an array. Run the program under gdb to get a backtrace, inspect the core dump, or use AddressSanitizer and valgrind to find invalid reads and writes. Check the return value of malloc and of functions that may return NULL before dereferencing.",
        relevant: [
            "Segmentation fault (SIGSEGV) occurs when a process dereferences a null pointer or dangling pointer; load the core dump in gdb and print the backtrace to find the faulting line.",
            "AddressSanitizer and valgrind detect invalid reads and writes, use after free and buffer overflow before they corrupt memory and cause a segmentation fault.",
        ],
        distractors: [
            "Taking a screenshot on your laptop: what the message about saved files means.",
            "My car program crashes? Dashboard message meaning explained by mechanics.",
            "What does it mean when a screenshot message says the program is not responding?",
        ],
    },
    Topic {
        domain: "software",
        question: "What are these strange lines my editor shows in the file and how do I get rid of them?",
        caption: "Code editor showing a file with conflict markers '<<<<<<< HEAD', '=======' and '>>>>>>> feature-branch' around two versions of the same function.",
        expansion: "Those lines are git merge conflict markers. When git merge or git rebase cannot automatically reconcile changes to the same lines, it writes both versions into the file between <<<<<<< HEAD, ======= and >>>>>>> branch markers. Resolve the conflict by editing the file to keep the right code and deleting the markers, then git add the file and run git commit or git rebase --continue. A mergetool or git checkout --ours / --theirs can pick one side.",
        relevant: [
            "Git writes conflict markers <<<<<<< HEAD, ======= and >>>>>>> when a merge or rebase touches the same lines; edit the file, remove the markers, then git add and commit.",
            "Use git mergetool or git checkout --ours and --theirs to resolve merge conflicts, and git rebase --continue after staging the resolved files.",
        ],
        distractors: [
            "Strange lines in your editor? Adjust the font and line spacing settings.",
            "How do I get rid of these strange lines on my monitor? Display file settings.",
            "Editor shows file too large: how to open big logs in a text editor.",
        ],
    },
    Topic {
        domain: "software",
        question: "Why does the browser show this error for every site even though my wifi is connected?",
        caption: "Browser window displaying 'DNS_PROBE_FINISHED_NXDOMAIN - This site can't be reached' while the wifi icon shows full signal.",
        expansion: "The error means DNS resolution failed: the browser could not translate the domain name into an IP address. The network link works, but the configured DNS resolver is unreachable or returns NXDOMAIN. Check resolver settings in /etc/resolv.conf or the network adapter, flush the DNS cache, try a public resolver such as 1.1.1.1 or 8.8.8.8, and test with nslookup or dig to see whether name lookup or the connection itself fails.",
        relevant: [
            "DNS_PROBE_FINISHED_NXDOMAIN means name resolution failed: the resolver could not map the domain name to an IP address. Test with nslookup or dig and switch to a public resolver.",
            "Flush the DNS cache and check /etc/resolv.conf or adapter DNS resolver settings when lookups fail while the network link is up.",
        ],
        distractors: [
            "Wifi connected but slow? Move the router away from the microwave for every site.",
            "Browser shows this error when the site certificate is expired for every visitor.",
            "Even though my wifi is connected the printer shows offline: a printer troubleshooting guide.",
        ],
    },
    Topic {
        domain: "software",
        question: "Why is this query in the screenshot so slow on a big table?",
        caption: "Database console showing EXPLAIN output with 'Seq Scan on orders' and 'rows=12000000' for a query filtering by customer_id, taking 48 seconds.",
        expansion: "The EXPLAIN plan shows a sequential scan: the database reads all twelve million rows of orders because no index exists on the filtered column customer_id. Creating a B-tree index with CREATE INDEX lets the query planner use an index scan and jump to matching rows. Keep table statistics fresh with ANALYZE, check selectivity, and consider a composite index that covers the WHERE and ORDER BY columns.",
        relevant: [
            "A sequential scan in EXPLAIN output means the planner reads every row; CREATE INDEX on the filtered column lets it use a B-tree index scan instead.",
            "Run ANALYZE to refresh planner statistics and add composite indexes covering WHERE and ORDER BY columns to speed up slow queries on large tables.",
        ],
        distractors: [
            "Slow big table delivery? Furniture shipping times in the screenshot of our order page.",
            "Why is this query so slow? Search engine tips for a big list of keywords.",
            "Screenshot of a big table setting for a dinner party in a slow food restaurant.",
        ],
    },
    Topic {
        domain: "software",
        question: "Why does the second loop in this code run so much slower than the first one?",
        caption: "Code snippet with two nested loops over a 4096 by 4096 matrix; the first iterates row by row, the second column by column, with timing output 0.2 s versus 3.1 s.",
        expansion: "The difference is CPU cache behavior. A matrix stored in row-major order places consecutive elements of a row next to each other, so iterating row by row reads memory sequentially and uses every byte of each 64-byte cache line, while the hardware prefetcher hides latency. Iterating column by column strides across rows, causing a cache miss on nearly every access and thrashing the L1 and L2 caches. Loop interchange or blocking (tiling) restores spatial locality.",
        relevant: [
            "Row-major matrix traversal column by column causes a cache miss per access because each stride skips a 64-byte cache line; loop interchange restores spatial locality.",
            "Loop tiling (blocking) keeps working sets inside the L1 and L2 caches and lets the hardware prefetcher hide memory latency.",
        ],
        distractors: [
            "Second-hand code books run slower in sales than the first edition.",
            "Why does my car run slower in second gear than the first one on a loop road?",
            "This loop in knitting code: second row patterns explained for the first project.",
        ],
    },
];

/// Spreads topic-ordered documents over ids so id order says nothing about
/// relevance. 17 is coprime to 50.
fn doc_id(position: usize) -> String {
    format!("doc-{:02}", (position * 17) % 50)
}

fn build() -> (Corpus, Vec<Query>, Qrels, Vec<FixtureRecord>) {
    let mut docs = Vec::new();
    let mut queries = Vec::new();
    let mut qrels = Qrels::new();
    let mut stages = Vec::new();
    for (t, topic) in TOPICS.iter().enumerate() {
        let qid = format!("q{t:02}");
        for (j, text) in topic.relevant.iter().chain(&topic.distractors).enumerate() {
            let id = doc_id(t * 5 + j);
            if j < 2 {
                qrels.insert(&qid, &id, 2 - j as u32);
            }
            docs.push(Document::new(id, *text).with_domain(topic.domain));
        }
        queries.push(
            Query::new(&qid, topic.question)
                .with_image(format!("images/{qid}.png"))
                .with_domain(topic.domain),
        );
        for (tag, response) in [(TAG_CAPTION, topic.caption), (TAG_EXPAND, topic.expansion)] {
            stages.push(FixtureRecord {
                tag: tag.into(),
                query_id: qid.clone(),
                pass: None,
                response: response.into(),
            });
        }
    }
    (Corpus::new(docs).expect("valid corpus"), queries, qrels, stages)
}

fn ranking_line(indices: impl IntoIterator<Item = usize>) -> String {
    indices
        .into_iter()
        .map(|i| format!("[{i}]"))
        .collect::<Vec<_>>()
        .join(" > ")
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> expandrank::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures/demo".into()));
    std::fs::create_dir_all(&out).map_err(|e| expandrank::Error::io(&out, e))?;
    let (corpus, queries, qrels, stages) = build();

    // Retrieval order under the default configuration, rerank off.
    let config = PipelineConfig {
        rerank_on: false,
        ..PipelineConfig::default()
    };
    let client = LlmClient::new(Arc::new(MockBackend::from_records(stages.clone())), 4);
    let engine = Engine::new(client, corpus.clone()).with_hashing_embedder(HASHING_DIM)?;
    let run = engine.run(&queries, &qrels, &config).await?;

    let mut oracle = Vec::new();
    let mut identity = Vec::new();
    let k1 = PipelineConfig::default().k1;
    for candidates in &run.candidates {
        let qid = &candidates.query_id;
        let grades: Vec<u32> = candidates.doc_ids().map(|d| qrels.grade(qid, d)).collect();
        let mut order: Vec<usize> = (1..=grades.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(grades[i - 1]));
        order.truncate(k1);
        oracle.push(FixtureRecord {
            tag: TAG_RERANK.into(),
            query_id: qid.clone(),
            pass: None,
            response: format!(
                "The relevant documents explain the phenomenon directly; the rest only share wording.\n{}",
                ranking_line(order)
            ),
        });
        identity.push(FixtureRecord {
            tag: TAG_RERANK.into(),
            query_id: qid.clone(),
            pass: None,
            response: ranking_line(1..=k1.min(grades.len())),
        });
    }

    write_corpus(out.join("corpus.jsonl"), &corpus)?;
    write_queries(out.join("queries.jsonl"), &queries)?;
    write_atomic(out.join("qrels.tsv"), format_qrels(&qrels).as_bytes())?;
    write_jsonl(out.join("llm.jsonl"), &stages)?;
    write_jsonl(out.join("rerank_oracle.jsonl"), &oracle)?;
    write_jsonl(out.join("rerank_identity.jsonl"), &identity)?;
    println!("{}", run.report.to_table());
    Ok(())
}
