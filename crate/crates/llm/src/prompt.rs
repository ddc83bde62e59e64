//! The two prompt templates: pairwise relatedness and category ranking.

use serde::{Deserialize, Serialize};

use crate::LlmError;

/// Bumped whenever the rendered text of either template changes, so cached
/// answers to an old wording are never reused.
pub const TEMPLATE_VERSION: &str = "tpl-v1";

/// Worked examples included in the similarity prompt unless overridden.
pub const DEFAULT_EXAMPLE_COUNT: usize = 2;

/// Which template a request renders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    Similarity,
    PseudoLabel,
}

impl PromptKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Similarity => "similarity",
            Self::PseudoLabel => "pseudo-label",
        }
    }
}

/// One worked example for the similarity template.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityExample {
    pub paper_a: String,
    pub paper_b: String,
    pub ratio: f64,
}

/// Built-in worked examples: one clearly related pair and one unrelated pair,
/// then alternating variants if more are requested.
pub fn default_examples(count: usize) -> Vec<SimilarityExample> {
    let base = [
        SimilarityExample {
            paper_a: "Semi-supervised classification with graph convolutional networks\nWe present a scalable approach for semi-supervised learning on graph-structured data based on an efficient variant of convolutional neural networks.".into(),
            paper_b: "Graph attention networks\nWe present graph attention networks, neural network architectures that operate on graph-structured data, leveraging masked self-attentional layers.".into(),
            ratio: 0.8,
        },
        SimilarityExample {
            paper_a: "Semi-supervised classification with graph convolutional networks\nWe present a scalable approach for semi-supervised learning on graph-structured data based on an efficient variant of convolutional neural networks.".into(),
            paper_b: "A relational model of data for large shared data banks\nFuture users of large data banks must be protected from having to know how the data is organized in the machine.".into(),
            ratio: 0.1,
        },
        SimilarityExample {
            paper_a: "Learning to rank for information retrieval\nWe study supervised ranking functions for document retrieval from click data.".into(),
            paper_b: "Query expansion using relevance feedback\nWe expand user queries with terms drawn from documents judged relevant.".into(),
            ratio: 0.6,
        },
    ];
    (0..count).map(|k| base[k % base.len()].clone()).collect()
}

/// Render node text as a `Title: … Abstract: …` block. The first line is the
/// title and the remainder the abstract; text already carrying a `Title:`
/// marker is used as is.
pub fn paper_block(text: &str) -> String {
    let text = text.trim();
    if text.starts_with("Title:") {
        return text.to_string();
    }
    let (title, abstract_) = match text.split_once('\n') {
        Some((t, a)) => (t.trim(), a.trim()),
        None => (text, ""),
    };
    format!("Title: {title} Abstract: {abstract_}")
}

fn ratio_literal(r: f64) -> String {
    format!("{r:.1}")
}

/// Similarity prompt for a pair of node texts.
pub fn build_similarity_prompt(text_a: &str, text_b: &str, examples: &[SimilarityExample]) -> Result<String, LlmError> {
    if text_a.trim().is_empty() || text_b.trim().is_empty() {
        return Err(LlmError::EmptyText);
    }
    let mut out = String::from("Your task is to calculate the similarity between the given two papers.");
    if !examples.is_empty() {
        out.push_str(" Here are some examples where the input is the information for paper A and paper B, and the output is the estimated related ratio between paper A and paper B:\n");
        for (k, ex) in examples.iter().enumerate() {
            out.push_str(&format!(
                "Example {}: [Input] Paper A: {} Paper B: {} [Output] Estimated Related Ratio between Paper A and Paper B: {}\n",
                k + 1,
                paper_block(&ex.paper_a),
                paper_block(&ex.paper_b),
                ratio_literal(ex.ratio)
            ));
        }
    } else {
        out.push('\n');
    }
    out.push_str(&format!(
        "Please return the similarity between the following two papers and briefly explain the reason: Paper A: {} Paper B: {}. Your return form is: Related ratio = ***, Reason: ***.",
        paper_block(text_a),
        paper_block(text_b)
    ));
    Ok(out)
}

/// Option letter for category index `i`: A, B, …, Z, then AA, AB, ….
pub fn option_letter(i: usize) -> String {
    if i < 26 {
        ((b'A' + i as u8) as char).to_string()
    } else {
        format!("{}{}", option_letter(i / 26 - 1), option_letter(i % 26))
    }
}

/// Category names are double-quoted when they contain a comma or a quote so
/// the comma-separated answer list stays unambiguous.
pub fn quote_category(name: &str) -> String {
    if name.contains(',') || name.contains('"') {
        format!("\"{}\"", name.replace('"', "\"\""))
    } else {
        name.to_string()
    }
}

/// Category-ranking prompt for one node text.
pub fn build_pseudolabel_prompt(text: &str, categories: &[String]) -> Result<String, LlmError> {
    if categories.len() < 2 {
        return Err(LlmError::TooFewCategories(categories.len()));
    }
    if text.trim().is_empty() {
        return Err(LlmError::EmptyText);
    }
    let block = paper_block(text).replacen(" Abstract: ", "\nAbstract: ", 1);
    let options: Vec<String> =
        categories.iter().enumerate().map(|(i, c)| format!("({}) {}", option_letter(i), quote_category(c))).collect();
    Ok(format!(
        "The title and abstract of the paper are as follows:\n{block}\nQuestion: Which of the following subcategories does this paper belong to: {}? If multiple options apply, provide a comma-separated list ordered from most to least related, then for each choice you gave, explain how it is present in the text.\nAnswer: ",
        options.join(", ")
    ))
}
