use std::collections::HashMap;

use litkb_core::ingest::{Chunk, MergePlan};
use rand::Rng;

/// Hand-counted segmentation of every fixture document: (ordinal, heading path).
pub fn expected_segments() -> HashMap<&'static str, Vec<(usize, Vec<&'static str>)>> {
    let mut m = HashMap::new();
    m.insert(
        "rev-taxane",
        vec![
            (1, vec![]),
            (2, vec!["Introduction"]),
            (3, vec!["Biosynthesis", "Taxadiene formation"]),
            (4, vec!["Biosynthesis", "Oxygenation steps", "Early hydroxylations"]),
            (5, vec!["Biosynthesis", "Oxygenation steps", "Side-chain assembly"]),
            (6, vec!["Pharmacology"]),
            (7, vec!["Supply"]),
            (8, vec!["Supply", "Plant cell culture"]),
        ],
    );
    m.insert(
        "rev-artemisinin",
        vec![
            (1, vec!["Artemisinin and its derivatives", "Discovery"]),
            (2, vec!["Artemisinin and its derivatives", "Mode of action"]),
            (3, vec!["Artemisinin and its derivatives", "Semi-synthetic derivatives"]),
            (4, vec!["Biosynthesis in Artemisia annua"]),
            (5, vec!["Biosynthesis in Artemisia annua", "Trichome localisation"]),
            (6, vec!["Resistance"]),
        ],
    );
    m.insert(
        "rev-terpene-synthases",
        vec![
            (1, vec![]),
            (2, vec!["Classes of terpene synthases"]),
            (3, vec!["Product diversity", "Monoterpenes"]),
            (4, vec!["Product diversity", "Sesquiterpenes"]),
            (5, vec!["Product diversity", "Diterpenes"]),
        ],
    );
    m.insert(
        "res-taxadiene",
        vec![
            (1, vec!["Background"]),
            (2, vec!["Methods", "Strain construction"]),
            (3, vec!["Methods", "Fermentation"]),
            (4, vec!["Results"]),
        ],
    );
    m.insert(
        "res-artemisinic-yeast",
        vec![
            (1, vec![]),
            (2, vec!["Introduction"]),
            (3, vec!["Pathway engineering in yeast"]),
            (4, vec!["Photochemical conversion"]),
        ],
    );
    m.insert(
        "res-limonene",
        vec![(1, vec!["Limonene toxicity to microbes"]), (2, vec!["Two-phase cultivation"])],
    );
    m.insert(
        "res-triptolide",
        vec![
            (1, vec!["Triptolide", "Source"]),
            (2, vec!["Triptolide", "Activity"]),
            (3, vec!["Triptolide", "Toxicity"]),
        ],
    );
    m.insert(
        "res-ginkgolide",
        vec![(1, vec![]), (2, vec!["Structure"]), (3, vec!["Pharmacology"])],
    );
    m.insert(
        "res-menthol",
        vec![(1, vec!["Menthol biosynthesis in peppermint"]), (2, vec!["Cooling sensation"])],
    );
    m.insert("res-carotenoid", vec![(1, vec!["Carotenoid cleavage"])]);
    m
}

pub const FIXTURE_CHUNKS: usize = 38;

pub fn normalized(chunks: &[Chunk]) -> String {
    chunks
        .iter()
        .flat_map(|c| c.text.split_whitespace())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn random_plan(r: &mut rand_chacha::ChaCha8Rng, chunks: &[Chunk]) -> MergePlan {
    let mut groups = Vec::new();
    let mut i = 0;
    while i < chunks.len() {
        if r.random_bool(0.35) {
            let max_len = chunks.len() - i;
            if max_len >= 2 {
                let len = r.random_range(2..=max_len.min(5));
                groups.push(chunks[i..i + len].iter().map(|c| c.chunk_id.clone()).collect());
                i += len;
                continue;
            }
        }
        i += 1;
    }
    MergePlan { groups }
}
