use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

/// DSP memory partition in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryBudget {
    pub total_bytes: usize,
    pub program_bytes: usize,
    pub tables_bytes: usize,
    pub buffer_bytes: usize,
    pub model_budget_bytes: usize,
}

impl Default for MemoryBudget {
    fn default() -> Self {
        Self {
            total_bytes: 131_072,
            program_bytes: 25_600,
            tables_bytes: 12_288,
            buffer_bytes: 64_000,
            model_budget_bytes: 13_312,
        }
    }
}

impl MemoryBudget {
    pub fn allocated_bytes(&self) -> usize {
        self.program_bytes + self.tables_bytes + self.buffer_bytes + self.model_budget_bytes
    }

    pub fn validate(&self) -> Result<()> {
        if self.allocated_bytes() > self.total_bytes {
            return Err(Error::config(alloc::format!(
                "budget lines sum to {} bytes, over the {} byte total",
                self.allocated_bytes(),
                self.total_bytes
            )));
        }
        if self.buffer_bytes < 2 {
            return Err(Error::config("audio buffer must hold at least one sample"));
        }
        Ok(())
    }

    /// Ring buffer capacity that fits the buffer line.
    pub fn buffer_capacity_samples(&self) -> usize {
        self.buffer_bytes / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Stage1,
    Stage2,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetLine {
    pub name: &'static str,
    pub limit_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetReport {
    pub stage: Stage,
    pub model_bytes: usize,
    pub lines: Vec<BudgetLine>,
    /// Bytes over the model line, 0 when it fits.
    pub overage_bytes: usize,
    /// Stage-2 models run on the application processor and are not held to the model line.
    pub exempt: bool,
}

impl BudgetReport {
    pub fn within_budget(&self) -> bool {
        self.exempt || self.overage_bytes == 0
    }
}

impl fmt::Display for BudgetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = match (self.exempt, self.overage_bytes) {
            (true, _) => "exempt",
            (false, 0) => "ok",
            (false, _) => "over budget",
        };
        write!(
            f,
            "{} model {} bytes: {verdict}, overage {} bytes;",
            self.stage.as_str(),
            self.model_bytes,
            self.overage_bytes
        )?;
        for line in &self.lines {
            write!(f, " {}={}", line.name, line.limit_bytes)?;
        }
        Ok(())
    }
}

/// Checks a model's serialized size against the model line. Only stage-1
/// models can fail.
pub fn enforce_budget(budget: &MemoryBudget, model_bytes: usize, stage: Stage) -> Result<BudgetReport> {
    let lines = alloc::vec![
        BudgetLine { name: "total", limit_bytes: budget.total_bytes },
        BudgetLine { name: "program", limit_bytes: budget.program_bytes },
        BudgetLine { name: "tables", limit_bytes: budget.tables_bytes },
        BudgetLine { name: "buffer", limit_bytes: budget.buffer_bytes },
        BudgetLine { name: "model", limit_bytes: budget.model_budget_bytes },
    ];
    let report = BudgetReport {
        stage,
        model_bytes,
        lines,
        overage_bytes: model_bytes.saturating_sub(budget.model_budget_bytes),
        exempt: stage == Stage::Stage2,
    };
    if report.within_budget() {
        Ok(report)
    } else {
        Err(Error::Budget(report))
    }
}
