//! Row serialization into `name: value, name: value` text.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Cell, ColumnSchema, TabularDataset};

/// Bumped whenever the serialization template changes; part of every cache key.
pub const TEMPLATE_VERSION: &str = "kv-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextCorpus {
    pub texts: Vec<String>,
    pub source_dataset_id: String,
    pub template_version: String,
}

impl TextCorpus {
    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    /// JSON-Lines export, one `{"i": index, "text": string}` object per row.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            i: usize,
            text: &'a str,
        }
        for (i, text) in self.texts.iter().enumerate() {
            serde_json::to_writer(&mut out, &Line { i, text })?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Shortest decimal that round-trips; integral values print without a fraction.
pub fn render_number(v: f64) -> String {
    if v == 0.0 {
        // folds -0.0 into "0"
        return "0".into();
    }
    format!("{v}")
}

fn render_cell(cell: &Cell) -> String {
    match cell {
        Cell::Number(v) => render_number(*v),
        Cell::Text(s) => s.clone(),
        Cell::Missing => String::new(),
    }
}

/// `"name1: v1, name2: v2, …"` in schema order.
pub fn serialize_row(schema: &[ColumnSchema], row: &[Cell]) -> String {
    schema
        .iter()
        .zip(row)
        .map(|(col, cell)| format!("{}: {}", col.name, render_cell(cell)))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn build_corpus(ds: &TabularDataset) -> TextCorpus {
    TextCorpus {
        texts: ds
            .rows
            .iter()
            .map(|r| serialize_row(ds.schema(), r))
            .collect(),
        source_dataset_id: ds.config.dataset_id(),
        template_version: TEMPLATE_VERSION.to_string(),
    }
}
