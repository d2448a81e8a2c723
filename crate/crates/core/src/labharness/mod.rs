//! Experiment orchestration: accuracy evaluation, transfer and black-box
//! grids over PNR, reports and the desk-scale lab pipeline.

pub mod eval;
pub mod experiments;
pub mod lab;
pub mod report;

pub use eval::{eval_accuracy, Evaluation};
pub use experiments::{
    arch_transfer_experiment, blackbox_experiment, clean_experiment, default_pnr_grid, domain_transfer_experiment,
    model_label, model_record, run_panels, AttackSettings, BlackboxArm, CraftCache, Crafted, GridSpec, Panel, TestSet,
    Victim,
};
pub use lab::{run_lab, LabConfig, LabModels, LabOutcome};
pub use report::{
    emit_report, from_json, panel_svg, to_csv, to_json, AttackRecord, Cell, CleanCell, ConfusionRecord, ExperimentKind,
    ExperimentReport, ModelRecord, Provenance, ReportFormat,
};
