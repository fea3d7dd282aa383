use std::path::Path;
use std::process::ExitCode;

use faultloc_core::dataset::DatasetError;
use faultloc_core::eval::EvalError;
use faultloc_core::features::FeatureError;
use faultloc_core::grn::GrnError;
use faultloc_core::pipeline::PipelineError;
use faultloc_core::sim::SimError;
use faultloc_core::tune::TuneError;
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Io,
    Data,
    Numerical,
}

impl Kind {
    fn code(self) -> u8 {
        match self {
            Kind::Config => 2,
            Kind::Io => 3,
            Kind::Data => 4,
            Kind::Numerical => 5,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Kind::Config => "config",
            Kind::Io => "io",
            Kind::Data => "data",
            Kind::Numerical => "numerical",
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: String) -> Self {
        Self::new(Kind::Config, message.trim_end().to_string())
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::new(Kind::Io, format!("{}: {e}", path.display()))
    }

    pub fn report(&self) -> ExitCode {
        let body = json!({
            "error": {
                "kind": self.kind.name(),
                "exit_code": self.kind.code(),
                "message": self.message,
            }
        });
        eprintln!("{body}");
        ExitCode::from(self.kind.code())
    }
}

fn sim_kind(e: &SimError) -> Kind {
    match e {
        SimError::InvalidConfig(_) | SimError::EmptyGrid | SimError::OverlappingSplits { .. } => Kind::Config,
        SimError::InvalidScenario { .. } => Kind::Data,
        SimError::SingularNetwork(_) => Kind::Numerical,
    }
}

fn grn_kind(e: &GrnError) -> Kind {
    match e {
        GrnError::InvalidHyperparams(_) | GrnError::InvalidConfig(_) => Kind::Config,
        GrnError::Diverged { .. } => Kind::Numerical,
        _ => Kind::Data,
    }
}

fn tune_kind(e: &TuneError) -> Kind {
    match e {
        TuneError::AllTrialsFailed(_) => Kind::Numerical,
        TuneError::Schema(_) | TuneError::InsufficientTrials { .. } => Kind::Data,
        _ => Kind::Config,
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let kind = match &e {
            PipelineError::Config(_) => Kind::Config,
            PipelineError::Io { .. } => Kind::Io,
            PipelineError::Sim(s) => sim_kind(s),
            PipelineError::Dataset(DatasetError::Io { .. }) => Kind::Io,
            PipelineError::Grn(g) | PipelineError::Seed { source: g, .. } => grn_kind(g),
            PipelineError::Tune(t) => tune_kind(t),
            _ => Kind::Data,
        };
        Self::new(kind, e.to_string())
    }
}

macro_rules! via_pipeline {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                PipelineError::from(e).into()
            }
        }
    )*};
}

via_pipeline!(SimError, DatasetError, FeatureError, GrnError, TuneError, EvalError);
