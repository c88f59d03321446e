use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::AccuracyMatrix;

/// Rounded summary values published alongside a reference table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportedTriple {
    pub avg_acc: f64,
    pub forgetting: f64,
    pub new_acc: f64,
}

/// A published stage-by-task accuracy table with its reported summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub method: String,
    pub task_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub reported: ReportedTriple,
}

impl ReferenceTable {
    pub fn matrix(&self) -> Result<AccuracyMatrix> {
        AccuracyMatrix::new(self.task_ids.clone(), self.rows.clone())
    }
}

const TABLES: [&str; 8] = [
    include_str!("../../fixtures/reference_tables/mage.json"),
    include_str!("../../fixtures/reference_tables/lora.json"),
    include_str!("../../fixtures/reference_tables/moelora.json"),
    include_str!("../../fixtures/reference_tables/ewc.json"),
    include_str!("../../fixtures/reference_tables/lae.json"),
    include_str!("../../fixtures/reference_tables/pgp.json"),
    include_str!("../../fixtures/reference_tables/cia.json"),
    include_str!("../../fixtures/reference_tables/reglora.json"),
];

/// The bundled reference tables, in a fixed order.
pub fn reference_tables() -> Vec<ReferenceTable> {
    TABLES
        .iter()
        .map(|t| serde_json::from_str(t).expect("bundled fixture parses"))
        .collect()
}
