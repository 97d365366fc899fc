use std::sync::Arc;

use crate::error::Result;
use crate::truth::{solve_value_tables, TableGrid, TransitionHazards, ValueTables};

/// Plug-in model for `E[Y | X^u]` backed by value tables.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    pub tables: Arc<ValueTables>,
    pub kind: String,
}

impl OutcomeModel {
    pub fn new(tables: ValueTables, kind: impl Into<String>) -> Self {
        OutcomeModel {
            tables: Arc::new(tables),
            kind: kind.into(),
        }
    }
}

/// Solve the value equations under estimated (or oracle) transition hazards.
pub fn plug_in_outcome_model(
    hazards: &TransitionHazards,
    grid: &TableGrid,
    kind: impl Into<String>,
) -> Result<OutcomeModel> {
    Ok(OutcomeModel::new(solve_value_tables(hazards, grid)?, kind))
}
