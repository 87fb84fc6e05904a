//! Quantitative evaluation: accuracy family, ROC-AUC, top-k, ROUGE-L and the
//! clinician score mappings. Everything here is a pure function of its input.

mod accuracy;
mod auc;
mod rouge;
mod scores;
mod table;

pub use accuracy::{
    exact_match_accuracy, single_match_accuracy, top_k_accuracy, top_k_labels, AccuracyReport, CaseSplit, SplitCounts,
};
pub use auc::{binary_auc, roc_auc, roc_auc_with, AucReport};
pub use rouge::{lcs_len, mean_rouge_l_f1, rouge_l, tokenize, RougeL};
pub use scores::{Brevity, RawScore, RubricMaps, ACCURACY_SCALE};
pub use table::{num, pct, TextTable};

/// Rows of named accuracy reports, laid out as model-comparison tables.
pub fn accuracy_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a AccuracyReport)>) -> TextTable {
    let mut t = TextTable::new([
        "Model",
        "Exact match (%)",
        "No finding (%)",
        "One pathology (%)",
        "Multiple pathology (%)",
        "Single match (%)",
    ]);
    for (name, r) in rows {
        t.push([
            name.to_string(),
            pct(Some(r.overall)),
            pct(r.no_finding),
            pct(r.one_pathology),
            pct(r.multiple_pathology),
            pct(r.single_match),
        ]);
    }
    t
}

pub fn rouge_table<'a>(rows: impl IntoIterator<Item = (&'a str, f64)>) -> TextTable {
    let mut t = TextTable::new(["Model", "Rouge-L (%)"]);
    for (name, f1) in rows {
        t.push([name.to_string(), pct(Some(f1))]);
    }
    t
}
