//! Statistics over corpora of reproduction runs: exact 2×2 tests,
//! stratified pooling, paired deltas, convergence and runtime aggregation,
//! plus ingestion of run directories and table rendering.

pub mod convergence;
pub mod ingest;
pub mod report;
pub mod runs;
pub mod runtime;
pub mod stratified;
pub mod table;

pub use convergence::{convergence_curve, RunOutcomes};
pub use ingest::{load_run_set, IngestError, RunSet, SIDECAR_FILE};
pub use report::{build_table, Analysis, Format, ReportOptions, ReportTable};
pub use runs::{discordant_pairs, nearest_rank, summarize_runs, Factor, PairedDelta, RunRecord, SummaryRow};
pub use runtime::expected_overall_time;
pub use stratified::{chi_square_1df_sf, cmh_test, cmh_test_with, mantel_haenszel_or, CmhOptions, CmhResult, StratifiedTables};
pub use table::{fisher_exact, fisher_p_rational, rational_to_f64, ContingencyTable2x2, FisherResult, OddsRatio};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("table has no observations")]
    EmptyTable,
    #[error("successes exceed totals")]
    InvalidCounts,
    #[error("no strata given")]
    NoStrata,
    #[error("every stratum is degenerate")]
    AllStrataDegenerate,
    #[error("group is empty")]
    EmptyGroup,
    #[error("paired run sets cover different cases")]
    UnpairedCases,
    #[error("case `{0}` appears twice in one run set")]
    DuplicateCase(String),
    #[error("run record for `{0}` is invalid")]
    InvalidRecord(String),
    #[error("run set reaches outside the first set's cases")]
    UniverseMismatch,
}
