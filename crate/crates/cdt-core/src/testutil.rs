//! Shared fixtures for unit tests.

use crate::corpus::{Annotation, LabeledCorpus, Record};
use crate::taxonomy::Taxonomy;

/// Builds a small taxonomy with labels C0.., D0.., T0.. and version "synthetic".
pub fn synthetic_taxonomy(nc: usize, nd: usize, nt: usize) -> Taxonomy {
    let mut doc = String::from("version = \"synthetic\"\n");
    for i in 0..nc {
        doc.push_str(&format!(
            "[[cognition]]\nname = \"C{i}\"\nabbreviation = \"C{i}A\"\ndefinition = \"c{i}\"\n"
        ));
    }
    for i in 0..nd {
        doc.push_str(&format!(
            "[[domain]]\nname = \"D{i}\"\ngroup = \"G\"\ndefinition = \"d{i}\"\n"
        ));
    }
    for i in 0..nt {
        doc.push_str(&format!("[[task]]\nname = \"T{i}\"\ndefinition = \"t{i}\"\n"));
    }
    Taxonomy::from_toml_str(&doc).unwrap()
}

pub fn record(id: &str, instruction: &str) -> Record {
    Record {
        id: id.to_string(),
        instruction: instruction.to_string(),
        input: None,
        response: None,
        source: None,
    }
}

pub fn annotation(cognition: &[&str], domain: &str, task: &str) -> Annotation {
    Annotation {
        cognition: cognition.iter().map(|s| s.to_string()).collect(),
        cognition_explanations: cognition.iter().map(|s| format!("uses {s}")).collect(),
        domain: domain.to_string(),
        task: task.to_string(),
    }
}

/// Labeled corpus from (id, cognition tags, domain, task) tuples.
pub fn labeled_corpus(
    taxonomy: &Taxonomy,
    rows: &[(&str, &[&str], &str, &str)],
) -> LabeledCorpus {
    let mut lc = LabeledCorpus::new(taxonomy.version().to_string());
    for (id, cogs, domain, task) in rows {
        lc.attach(record(id, &format!("instruction {id}")), annotation(cogs, domain, task), taxonomy)
            .unwrap();
    }
    lc
}
