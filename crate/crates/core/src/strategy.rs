use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::objective::LambdaSchedule;

/// Pre-training variant: where replacements come from and which losses train.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    Sas,
    SasC,
    MaskMlm,
    UnigMlm,
    UnigMlmSas,
    UnigMlmRtdC,
    UnigMlmRtd,
    Electra2Net,
}

/// Source of the tokens written at the augmented positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Replacement {
    Mask,
    /// Fresh cold-start draws every epoch.
    ColdStart,
    /// Cold start in the first epoch, then the model's own previous-epoch samples.
    SelfAugment,
    /// A separate generator network sampled within the same step.
    Generator,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::MaskMlm,
        Strategy::UnigMlm,
        Strategy::UnigMlmSas,
        Strategy::UnigMlmRtdC,
        Strategy::UnigMlmRtd,
        Strategy::SasC,
        Strategy::Sas,
        Strategy::Electra2Net,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Sas => "SAS",
            Strategy::SasC => "SAS_C",
            Strategy::MaskMlm => "MASK_MLM",
            Strategy::UnigMlm => "UNIG_MLM",
            Strategy::UnigMlmSas => "UNIG_MLM_SAS",
            Strategy::UnigMlmRtdC => "UNIG_MLM_RTD_C",
            Strategy::UnigMlmRtd => "UNIG_MLM_RTD",
            Strategy::Electra2Net => "ELECTRA_2NET",
        }
    }

    /// Row label used in the ablation table.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Sas => "SAS",
            Strategy::SasC => "SAS^c",
            Strategy::MaskMlm => "Mask-MLM (BERT)",
            Strategy::UnigMlm => "Unig-MLM",
            Strategy::UnigMlmSas => "Unig-MLM-SAS",
            Strategy::UnigMlmRtdC => "Unig-MLM-RTD^c",
            Strategy::UnigMlmRtd => "Unig-MLM-RTD",
            Strategy::Electra2Net => "ELECTRA (2 networks)",
        }
    }

    pub fn replacement(self) -> Replacement {
        match self {
            Strategy::MaskMlm => Replacement::Mask,
            Strategy::UnigMlm | Strategy::UnigMlmRtdC | Strategy::UnigMlmRtd => Replacement::ColdStart,
            Strategy::Sas | Strategy::SasC | Strategy::UnigMlmSas => Replacement::SelfAugment,
            Strategy::Electra2Net => Replacement::Generator,
        }
    }

    /// Whether the RTD loss is trained.
    pub fn uses_rtd(self) -> bool {
        !matches!(self, Strategy::MaskMlm | Strategy::UnigMlm | Strategy::UnigMlmSas)
    }

    pub fn self_augmenting(self) -> bool {
        self.replacement() == Replacement::SelfAugment
    }

    pub fn two_network(self) -> bool {
        self == Strategy::Electra2Net
    }

    /// Encoder forward passes per training batch.
    pub fn forwards_per_batch(self) -> u64 {
        if self.two_network() {
            2
        } else {
            1
        }
    }

    /// λ schedule used when the configuration does not override it.
    pub fn default_lambda(self, epochs: u32) -> LambdaSchedule {
        match self {
            Strategy::Sas | Strategy::UnigMlmRtd => LambdaSchedule::EpochLinear {
                start: 50.0,
                end: 200.0,
                epochs,
            },
            Strategy::SasC | Strategy::UnigMlmRtdC | Strategy::Electra2Net => LambdaSchedule::Constant(50.0),
            _ => LambdaSchedule::Constant(0.0),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = Strategy::ALL.iter().map(|s| s.name()).collect();
                Error::Config(format!("unknown strategy {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("sas-c".parse::<Strategy>().unwrap(), Strategy::SasC);
        assert!("BERT".parse::<Strategy>().is_err());
    }

    #[test]
    fn matrix() {
        let rtd: Vec<_> = Strategy::ALL.into_iter().filter(|s| s.uses_rtd()).collect();
        assert_eq!(rtd.len(), 5);
        assert_eq!(Strategy::Electra2Net.forwards_per_batch(), 2);
        assert!(Strategy::UnigMlmSas.self_augmenting() && !Strategy::UnigMlmSas.uses_rtd());
        assert_eq!(Strategy::Sas.default_lambda(10).value(9), 200.0);
        assert_eq!(Strategy::SasC.default_lambda(10).value(9), 50.0);
    }
}
