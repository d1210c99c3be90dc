//! Grant/deny gate combining the global model's prediction with the
//! behaviour assessment of the same request.
//!
//! A request is denied when either signal says malicious. A model prediction
//! of `Unknown` does not deny on its own.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{ClassLabel, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::fed::GlobalModel;
use crate::model;
use crate::ube::{AccessRequest, Intent, SecurityAssessment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Granted,
    Denied,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Granted => "granted",
            Verdict::Denied => "denied",
        })
    }
}

/// Which trigger fired. The model wins the label when both fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reason {
    ModelMalicious,
    UbeMalicious,
    Clean,
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reason::ModelMalicious => "model_malicious",
            Reason::UbeMalicious => "ube_malicious",
            Reason::Clean => "clean",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessDecision {
    pub request: AccessRequest,
    pub predicted_class: ClassLabel,
    pub ube_intent: Intent,
    pub sigma_total: u32,
    pub verdict: Verdict,
    pub reason: Reason,
}

impl AccessDecision {
    pub fn is_denied(&self) -> bool {
        self.verdict == Verdict::Denied
    }
}

/// The OR rule on its own.
pub fn combine(predicted: ClassLabel, intent: Intent) -> (Verdict, Reason) {
    if predicted == ClassLabel::Malicious {
        (Verdict::Denied, Reason::ModelMalicious)
    } else if intent == Intent::Malicious {
        (Verdict::Denied, Reason::UbeMalicious)
    } else {
        (Verdict::Granted, Reason::Clean)
    }
}

/// Decides a request given features already normalized with the model's
/// training statistics.
pub fn decide(
    request: &AccessRequest,
    features: &[f64; NUM_FEATURES],
    assessment: &SecurityAssessment,
    global: &GlobalModel,
) -> Result<AccessDecision> {
    let rr = &assessment.risk_record;
    if rr.user_id != request.user_id || rr.data_id != request.data_id {
        return Err(Error::invalid(format!(
            "assessment is for ({}, {}), request is ({}, {})",
            rr.user_id, rr.data_id, request.user_id, request.data_id
        )));
    }
    let predicted_class = model::predict(&global.params, &global.spec, features)?;
    let (verdict, reason) = combine(predicted_class, assessment.intent);
    Ok(AccessDecision {
        request: request.clone(),
        predicted_class,
        ube_intent: assessment.intent,
        sigma_total: assessment.sigma_total,
        verdict,
        reason,
    })
}

/// Normalizes raw features with the checkpoint's statistics, then [`decide`]s.
pub fn decide_raw(
    request: &AccessRequest,
    raw_features: &[f64; NUM_FEATURES],
    assessment: &SecurityAssessment,
    checkpoint: &Checkpoint,
) -> Result<AccessDecision> {
    let stats = checkpoint
        .stats
        .as_ref()
        .ok_or_else(|| Error::Normalization("checkpoint carries no normalization statistics".into()))?;
    decide(request, &stats.apply(raw_features), assessment, &checkpoint.model)
}

pub const DECISION_LOG_HEADER: &str = "user_id,data_id,predicted_class,sigma_total,verdict,reason";

pub fn write_decision_log<W: Write>(out: W, decisions: &[AccessDecision]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(DECISION_LOG_HEADER.split(','))?;
    for d in decisions {
        w.write_record([
            d.request.user_id.clone(),
            d.request.data_id.clone(),
            d.predicted_class.code().to_string(),
            d.sigma_total.to_string(),
            d.verdict.to_string(),
            d.reason.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_table() {
        use ClassLabel::*;
        assert_eq!(combine(NonMalicious, Intent::NonMalicious), (Verdict::Granted, Reason::Clean));
        assert_eq!(combine(NonMalicious, Intent::Malicious), (Verdict::Denied, Reason::UbeMalicious));
        assert_eq!(combine(Malicious, Intent::NonMalicious), (Verdict::Denied, Reason::ModelMalicious));
        assert_eq!(combine(Malicious, Intent::Malicious), (Verdict::Denied, Reason::ModelMalicious));
        assert_eq!(combine(Unknown, Intent::NonMalicious), (Verdict::Granted, Reason::Clean));
        assert_eq!(combine(Unknown, Intent::Malicious), (Verdict::Denied, Reason::UbeMalicious));
    }

    #[test]
    fn raising_a_trigger_never_grants() {
        use ClassLabel::*;
        for p in ClassLabel::ALL {
            for i in [Intent::NonMalicious, Intent::Malicious] {
                let before = combine(p, i).0;
                if before == Verdict::Denied {
                    assert_eq!(combine(Malicious, i).0, Verdict::Denied);
                    assert_eq!(combine(p, Intent::Malicious).0, Verdict::Denied);
                }
            }
        }
    }

    #[test]
    fn decide_checks_request_and_stats() {
        use crate::dataset::NormStats;
        use crate::model::{init_params, NetworkSpec};
        use crate::ube::{assess, AuthorizationSet, SecurityThresholds, TimeWindow, UserHistory};

        let spec = NetworkSpec::afed();
        let model = GlobalModel::new(spec.clone(), init_params(&spec, 1)).unwrap();
        let req = AccessRequest {
            user_id: "u1".into(),
            data_id: "D3".into(),
            category_id: "C1".into(),
            timestamp: 4,
        };
        let a = assess(
            &req,
            &UserHistory::empty("u1"),
            &AuthorizationSet::new(),
            &TimeWindow::new(0, 4).unwrap(),
            &SecurityThresholds::default(),
        )
        .unwrap();
        let d = decide(&req, &[0.5; NUM_FEATURES], &a, &model).unwrap();
        // empty history alone denies
        assert_eq!(d.verdict, Verdict::Denied);
        assert!(d.sigma_total >= 1);

        let other = AccessRequest {
            data_id: "D4".into(),
            ..req.clone()
        };
        assert!(decide(&other, &[0.5; NUM_FEATURES], &a, &model).is_err());

        let mut ck = Checkpoint { model, stats: None };
        assert!(matches!(decide_raw(&req, &[1.0; NUM_FEATURES], &a, &ck), Err(Error::Normalization(_))));
        ck.stats = Some(NormStats {
            min: [0.0; NUM_FEATURES],
            max: [2.0; NUM_FEATURES],
        });
        assert_eq!(
            decide_raw(&req, &[1.0; NUM_FEATURES], &a, &ck).unwrap(),
            decide(&req, &[0.5; NUM_FEATURES], &a, &ck.model).unwrap()
        );
    }
}
