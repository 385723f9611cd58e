use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::composer::{IdentityPolicy, SegmentMask};
use crate::keyspace::{BoundaryMode, MetaTerms};
use crate::{Error, Result};

/// Training method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Method {
    /// Hierarchical prompts with key-space routing.
    #[default]
    Full,
    /// Shared weights only, no prompts, no memory.
    SequentialFinetune,
    /// Shared weights only, plus uniformly sampled replay memory.
    ReplayOnly,
}

/// Mechanisms that can be switched off one at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields, rename_all = "kebab-case"))]
pub struct Ablations {
    pub no_general_prompt: bool,
    pub no_format_prompt: bool,
    pub no_task_prompt: bool,
    pub no_meta_prompt: bool,
    /// Gold task identities only.
    pub no_sched_sampling: bool,
    /// Inferred task identities only.
    pub no_gt_identity: bool,
    /// Drops the negative hinge of the task-key loss.
    pub no_neg_samples: bool,
    /// Detection with the fixed 0.35 boundary instead of learned ones.
    pub fixed_boundary: bool,
    /// Drops the push term of the meta-key loss.
    pub no_sample_diversity: bool,
    /// Drops the centroid loss on memory samples.
    pub no_memory_diversity: bool,
    /// Drops the pull term of the meta-key loss.
    pub no_locality: bool,
    /// Centroid loss targets the sample's own query instead of its cluster.
    pub no_cluster: bool,
    pub no_memory: bool,
}

/// Flag names and accessors, in a fixed order.
const FLAGS: [(&str, fn(&mut Ablations) -> &mut bool); 13] = [
    ("no-general-prompt", |a| &mut a.no_general_prompt),
    ("no-format-prompt", |a| &mut a.no_format_prompt),
    ("no-task-prompt", |a| &mut a.no_task_prompt),
    ("no-meta-prompt", |a| &mut a.no_meta_prompt),
    ("no-sched-sampling", |a| &mut a.no_sched_sampling),
    ("no-gt-identity", |a| &mut a.no_gt_identity),
    ("no-neg-samples", |a| &mut a.no_neg_samples),
    ("fixed-boundary", |a| &mut a.fixed_boundary),
    ("no-sample-diversity", |a| &mut a.no_sample_diversity),
    ("no-memory-diversity", |a| &mut a.no_memory_diversity),
    ("no-locality", |a| &mut a.no_locality),
    ("no-cluster", |a| &mut a.no_cluster),
    ("no-memory", |a| &mut a.no_memory),
];

impl Ablations {
    pub fn flag_names() -> impl Iterator<Item = &'static str> {
        FLAGS.iter().map(|(n, _)| *n)
    }

    pub fn set(&mut self, name: &str) -> Result<()> {
        let (_, get) = FLAGS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::invalid("variant", alloc::format!("unknown ablation `{name}`")))?;
        *get(self) = true;
        Ok(())
    }

    pub fn active(&self) -> Vec<&'static str> {
        let mut copy = *self;
        FLAGS
            .iter()
            .filter(|(_, get)| *get(&mut copy))
            .map(|(n, _)| *n)
            .collect()
    }

    pub fn any(&self) -> bool {
        !self.active().is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Variant {
    pub method: Method,
    pub ablations: Ablations,
}

impl Variant {
    pub fn full() -> Self {
        Self::default()
    }

    pub fn sequential_finetune() -> Self {
        Self {
            method: Method::SequentialFinetune,
            ..Self::default()
        }
    }

    pub fn replay_only() -> Self {
        Self {
            method: Method::ReplayOnly,
            ..Self::default()
        }
    }

    pub fn with(mut self, flag: &str) -> Result<Self> {
        self.ablations.set(flag)?;
        Ok(self)
    }

    /// Parses `full`, `sequential-finetune`, `replay-only`, or `full` followed
    /// by `+flag` terms, e.g. `full+no-memory+fixed-boundary`. A bare flag
    /// such as `no-memory` means `full+no-memory`.
    pub fn parse(tag: &str) -> Result<Self> {
        let mut parts = tag.split('+').map(str::trim);
        let head = parts.next().unwrap_or_default();
        let mut variant = match head {
            "full" | "diana" => Self::full(),
            "sequential-finetune" | "finetune" => Self::sequential_finetune(),
            "replay-only" | "replay" => Self::replay_only(),
            flag => Self::full().with(flag)?,
        };
        for flag in parts {
            variant.ablations.set(flag)?;
        }
        variant.validate()?;
        Ok(variant)
    }

    /// Canonical tag; round-trips through [`Variant::parse`].
    pub fn tag(&self) -> String {
        match self.method {
            Method::SequentialFinetune => "sequential-finetune".to_string(),
            Method::ReplayOnly => "replay-only".to_string(),
            Method::Full => {
                let mut tag = String::from("full");
                for flag in self.ablations.active() {
                    tag.push('+');
                    tag.push_str(flag);
                }
                tag
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.ablations;
        if self.method != Method::Full && a.any() {
            return Err(Error::invalid(
                "variant",
                "ablation flags apply to the full method only",
            ));
        }
        if a.no_sched_sampling && a.no_gt_identity {
            return Err(Error::invalid(
                "variant",
                "no-sched-sampling (gold only) contradicts no-gt-identity (inferred only)",
            ));
        }
        if a.no_cluster && (a.no_memory_diversity || a.no_memory) {
            return Err(Error::invalid(
                "variant",
                "no-cluster modifies the centroid loss that no-memory-diversity / no-memory remove",
            ));
        }
        Ok(())
    }

    pub fn uses_prompts(&self) -> bool {
        self.method == Method::Full
    }

    pub fn uses_memory(&self) -> bool {
        match self.method {
            Method::Full => !self.ablations.no_memory,
            Method::ReplayOnly => true,
            Method::SequentialFinetune => false,
        }
    }

    pub fn uses_negatives(&self) -> bool {
        self.uses_memory() && !self.ablations.no_neg_samples
    }

    pub fn uses_centroid_loss(&self) -> bool {
        self.uses_memory() && !self.ablations.no_memory_diversity
    }

    pub fn segment_mask(&self) -> SegmentMask {
        if !self.uses_prompts() {
            return SegmentMask::NONE;
        }
        let a = &self.ablations;
        SegmentMask {
            general: !a.no_general_prompt,
            format: !a.no_format_prompt,
            task: !a.no_task_prompt,
            meta: !a.no_meta_prompt,
        }
    }

    pub fn identity_policy(&self) -> IdentityPolicy {
        if self.ablations.no_sched_sampling {
            IdentityPolicy::GoldOnly
        } else if self.ablations.no_gt_identity {
            IdentityPolicy::InferredOnly
        } else {
            IdentityPolicy::Scheduled
        }
    }

    pub fn boundary_mode(&self) -> BoundaryMode {
        if self.ablations.fixed_boundary {
            BoundaryMode::FIXED_DEFAULT
        } else {
            BoundaryMode::Adaptive
        }
    }

    pub fn meta_terms(&self) -> MetaTerms {
        MetaTerms {
            pull: !self.ablations.no_locality,
            push: !self.ablations.no_sample_diversity,
        }
    }
}
