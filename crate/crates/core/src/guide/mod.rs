//! Off-the-shelf inversions that produce the guide image from undersampled
//! k-space.

pub mod cascade;
pub mod haar;
pub mod ista;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{ComplexImage, KSpaceGrid};
use crate::sampling::{zero_fill, SamplingMask};

pub use cascade::{cascade_forward, CascadeConfig, CascadeModel, CascadeSample};
pub use haar::{haar_dwt2, haar_idwt2};
pub use ista::{ista_objective, ista_reconstruct, ista_step, IstaConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GuideKind {
    ZeroFill,
    IstaWavelet(IstaConfig),
    CascadeCnn(CascadeConfig),
}

impl Default for GuideKind {
    fn default() -> Self {
        GuideKind::IstaWavelet(IstaConfig::default())
    }
}

impl GuideKind {
    pub fn default_identifier(&self) -> &'static str {
        match self {
            GuideKind::ZeroFill => "zero_fill",
            GuideKind::IstaWavelet(_) => "ista",
            GuideKind::CascadeCnn(_) => "cascade",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            GuideKind::ZeroFill => Ok(()),
            GuideKind::IstaWavelet(c) => c.validate(),
            GuideKind::CascadeCnn(c) => c.validate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuideSolver {
    pub kind: GuideKind,
    pub identifier: String,
    cascade: Option<CascadeModel>,
}

impl GuideSolver {
    pub fn new(kind: GuideKind) -> Self {
        let identifier = kind.default_identifier().to_string();
        Self {
            kind,
            identifier,
            cascade: None,
        }
    }

    pub fn with_identifier(mut self, identifier: impl Into<String>) -> Self {
        self.identifier = identifier.into();
        self
    }

    pub fn needs_weights(&self) -> bool {
        matches!(self.kind, GuideKind::CascadeCnn(_))
    }

    /// Attaches trained cascade weights; the model must match the configured sizes.
    pub fn set_cascade(&mut self, model: CascadeModel) -> Result<()> {
        match &self.kind {
            GuideKind::CascadeCnn(cfg)
                if cfg.blocks == model.cfg.blocks
                    && cfg.convs_per_block == model.cfg.convs_per_block
                    && cfg.feature_maps == model.cfg.feature_maps =>
            {
                self.cascade = Some(model);
                Ok(())
            }
            GuideKind::CascadeCnn(_) => Err(Error::Dimension("cascade weights do not match the configured sizes".into())),
            _ => Err(Error::Parameter(format!("guide `{}` takes no weights", self.identifier))),
        }
    }

    pub fn cascade(&self) -> Option<&CascadeModel> {
        self.cascade.as_ref()
    }

    /// `<dir>/<identifier>.weights`.
    pub fn weights_path(&self, dir: &Path) -> std::path::PathBuf {
        dir.join(format!("{}.weights", self.identifier))
    }

    pub fn load_weights(&mut self, dir: &Path) -> Result<()> {
        if self.needs_weights() {
            let model = CascadeModel::load(&self.weights_path(dir))?;
            self.set_cascade(model)?;
        }
        Ok(())
    }

    pub fn reconstruct(&self, y: &KSpaceGrid, mask: &SamplingMask) -> Result<ComplexImage> {
        match &self.kind {
            GuideKind::ZeroFill => zero_fill(y, mask),
            GuideKind::IstaWavelet(cfg) => ista_reconstruct(y, mask, cfg),
            GuideKind::CascadeCnn(_) => {
                let model = self
                    .cascade
                    .as_ref()
                    .ok_or_else(|| Error::UninitializedModel(self.identifier.clone()))?;
                cascade_forward(model, y, mask)
            }
        }
    }
}
