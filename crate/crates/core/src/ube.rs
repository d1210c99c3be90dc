//! User behaviour evaluation.
//!
//! Turns a user's access history, authorization set and current request into
//! binary security parameters, sums them into a risk score and classifies the
//! request intent. All functions are pure.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One past data access by a user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRecord {
    pub data_id: String,
    pub category_id: String,
    pub timestamp: u64,
    /// Whether the object was in the user's authorization set at access time.
    pub authorized: bool,
    /// Whether the accessed data was later leaked. Only completed accesses leak.
    pub leaked: bool,
}

/// Time-ordered access log of one user. An empty log means an unknown user.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UserHistory {
    user_id: String,
    records: Vec<AccessRecord>,
}

impl UserHistory {
    pub fn new(user_id: impl Into<String>, records: Vec<AccessRecord>) -> Result<Self> {
        let user_id = user_id.into();
        if let Some(w) = records.windows(2).find(|w| w[1].timestamp < w[0].timestamp) {
            return Err(Error::invalid(format!(
                "history of {user_id} is not time ordered ({} after {})",
                w[1].timestamp, w[0].timestamp
            )));
        }
        Ok(Self { user_id, records })
    }

    pub fn empty(user_id: impl Into<String>) -> Self {
        Self {
            user_id: user_id.into(),
            records: Vec::new(),
        }
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn records(&self) -> &[AccessRecord] {
        &self.records
    }

    pub fn last_timestamp(&self) -> Option<u64> {
        self.records.last().map(|r| r.timestamp)
    }

    /// Appends a record; it must not predate the current last record.
    pub fn push(&mut self, record: AccessRecord) -> Result<()> {
        if let Some(last) = self.last_timestamp() {
            if record.timestamp < last {
                return Err(Error::invalid(format!(
                    "record at {} predates history end {last}",
                    record.timestamp
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    fn in_window<'a>(&'a self, window: &'a TimeWindow) -> impl Iterator<Item = &'a AccessRecord> + 'a {
        self.records.iter().filter(move |r| window.contains(r.timestamp))
    }
}

/// Set of `(category_id, data_id)` pairs a user may access.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AuthorizationSet {
    by_category: BTreeMap<String, BTreeSet<String>>,
}

impl AuthorizationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, category_id: impl Into<String>, data_id: impl Into<String>) -> bool {
        self.by_category
            .entry(category_id.into())
            .or_default()
            .insert(data_id.into())
    }

    pub fn contains(&self, category_id: &str, data_id: &str) -> bool {
        self.by_category
            .get(category_id)
            .is_some_and(|ds| ds.contains(data_id))
    }

    pub fn len(&self) -> usize {
        self.by_category.values().map(BTreeSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.by_category
            .iter()
            .flat_map(|(c, ds)| ds.iter().map(move |d| (c.as_str(), d.as_str())))
    }
}

impl<C: Into<String>, D: Into<String>> FromIterator<(C, D)> for AuthorizationSet {
    fn from_iter<I: IntoIterator<Item = (C, D)>>(iter: I) -> Self {
        let mut set = Self::new();
        for (c, d) in iter {
            set.insert(c, d);
        }
        set
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRequest {
    pub user_id: String,
    pub data_id: String,
    pub category_id: String,
    pub timestamp: u64,
}

/// Closed interval `[start, end]` of integer ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeWindow {
    start: u64,
    end: u64,
}

impl TimeWindow {
    pub fn new(start: u64, end: u64) -> Result<Self> {
        if start > end {
            return Err(Error::invalid(format!("window start {start} after end {end}")));
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> u64 {
        self.start
    }

    pub fn end(&self) -> u64 {
        self.end
    }

    pub fn contains(&self, t: u64) -> bool {
        self.start <= t && t <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityThresholds {
    thr_attack: f64,
    thr_freq: f64,
}

impl SecurityThresholds {
    pub const DEFAULT_ATTACK: f64 = 0.5;
    pub const DEFAULT_FREQ: f64 = 0.3;

    pub fn new(thr_attack: f64, thr_freq: f64) -> Result<Self> {
        for (name, v) in [("thr_attack", thr_attack), ("thr_freq", thr_freq)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(Self { thr_attack, thr_freq })
    }

    pub fn thr_attack(&self) -> f64 {
        self.thr_attack
    }

    pub fn thr_freq(&self) -> f64 {
        self.thr_freq
    }
}

impl Default for SecurityThresholds {
    fn default() -> Self {
        Self {
            thr_attack: Self::DEFAULT_ATTACK,
            thr_freq: Self::DEFAULT_FREQ,
        }
    }
}

/// A binary security parameter: `Clear` (0) allows, `Raised` (1) counts
/// against the request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Flag {
    Clear = 0,
    Raised = 1,
}

impl Flag {
    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn raised_if(cond: bool) -> Self {
        if cond {
            Flag::Raised
        } else {
            Flag::Clear
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Intent {
    NonMalicious = 0,
    Malicious = 1,
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Intent::NonMalicious => "non-malicious",
            Intent::Malicious => "malicious",
        })
    }
}

/// Which behavioural test produced a flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parameter {
    History,
    Authorization,
    AttackFactor,
    LeakFrequency,
}

impl Parameter {
    pub fn name(self) -> &'static str {
        match self {
            Parameter::History => "sigma_history",
            Parameter::Authorization => "sigma_authorized",
            Parameter::AttackFactor => "sigma_attack",
            Parameter::LeakFrequency => "sigma_leak",
        }
    }
}

/// Per-request risk record: who asked for what, the verdict on intent, and
/// the evaluation window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskRecord {
    pub user_id: String,
    pub data_id: String,
    pub intent: Intent,
    pub window: TimeWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityAssessment {
    /// Flags in evaluation order. New parameters append here.
    pub parameters: Vec<(Parameter, Flag)>,
    pub attack_factor: f64,
    pub leak_frequency: f64,
    pub sigma_total: u32,
    pub intent: Intent,
    pub risk_record: RiskRecord,
}

impl SecurityAssessment {
    pub fn flag(&self, parameter: Parameter) -> Option<Flag> {
        self.parameters
            .iter()
            .find(|(p, _)| *p == parameter)
            .map(|&(_, f)| f)
    }

    pub fn sigma_history(&self) -> Flag {
        self.flag(Parameter::History).unwrap_or(Flag::Clear)
    }

    pub fn sigma_authorized(&self) -> Flag {
        self.flag(Parameter::Authorization).unwrap_or(Flag::Clear)
    }

    pub fn sigma_attack(&self) -> Flag {
        self.flag(Parameter::AttackFactor).unwrap_or(Flag::Clear)
    }

    pub fn sigma_leak(&self) -> Flag {
        self.flag(Parameter::LeakFrequency).unwrap_or(Flag::Clear)
    }
}

/// Known (0) when the user has at least one past access, unknown (1) otherwise.
pub fn history_status(history: &UserHistory) -> Flag {
    Flag::raised_if(history.records.is_empty())
}

pub fn authorization_status(request: &AccessRequest, auth: &AuthorizationSet) -> Flag {
    Flag::raised_if(!auth.contains(&request.category_id, &request.data_id))
}

/// Number of leaked accesses inside the window.
pub fn malicious_distribution_count(history: &UserHistory, window: &TimeWindow) -> u64 {
    history.in_window(window).filter(|r| r.leaked).count() as u64
}

/// Ratio of malicious distributions to total accesses; 0 when there were no
/// accesses.
pub fn attack_factor(dd_mal: u64, da_total: u64) -> Result<f64> {
    if dd_mal > da_total {
        return Err(Error::InconsistentCounts {
            malicious: dd_mal,
            total: da_total,
        });
    }
    if da_total == 0 {
        return Ok(0.0);
    }
    Ok(dd_mal as f64 / da_total as f64)
}

pub fn attack_flag(kappa: f64, thresholds: &SecurityThresholds) -> Flag {
    Flag::raised_if(kappa >= thresholds.thr_attack)
}

/// Fraction of in-window accesses that fall outside the authorization set.
pub fn leak_frequency(history: &UserHistory, auth: &AuthorizationSet, window: &TimeWindow) -> f64 {
    let (total, unauthorized) = history.in_window(window).fold((0u64, 0u64), |(t, u), r| {
        let bad = !auth.contains(&r.category_id, &r.data_id);
        (t + 1, u + u64::from(bad))
    });
    if total == 0 {
        0.0
    } else {
        unauthorized as f64 / total as f64
    }
}

pub fn leak_flag(freq: f64, thresholds: &SecurityThresholds) -> Flag {
    Flag::raised_if(freq >= thresholds.thr_freq)
}

pub fn assess(
    request: &AccessRequest,
    history: &UserHistory,
    auth: &AuthorizationSet,
    window: &TimeWindow,
    thresholds: &SecurityThresholds,
) -> Result<SecurityAssessment> {
    if history.user_id != request.user_id {
        return Err(Error::invalid(format!(
            "history belongs to {}, request from {}",
            history.user_id, request.user_id
        )));
    }
    if let Some(last) = history.last_timestamp() {
        if request.timestamp < last {
            return Err(Error::invalid(format!(
                "request at {} predates history end {last}",
                request.timestamp
            )));
        }
    }

    let dd_mal = malicious_distribution_count(history, window);
    let da_total = history.in_window(window).count() as u64;
    let kappa = attack_factor(dd_mal, da_total)?;
    let freq = leak_frequency(history, auth, window);

    let parameters = vec![
        (Parameter::History, history_status(history)),
        (Parameter::Authorization, authorization_status(request, auth)),
        (Parameter::AttackFactor, attack_flag(kappa, thresholds)),
        (Parameter::LeakFrequency, leak_flag(freq, thresholds)),
    ];
    let sigma_total: u32 = parameters.iter().map(|(_, f)| u32::from(f.value())).sum();
    let intent = if sigma_total < 1 {
        Intent::NonMalicious
    } else {
        Intent::Malicious
    };

    Ok(SecurityAssessment {
        parameters,
        attack_factor: kappa,
        leak_frequency: freq,
        sigma_total,
        intent,
        risk_record: RiskRecord {
            user_id: request.user_id.clone(),
            data_id: request.data_id.clone(),
            intent,
            window: *window,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(c: &str, d: &str, t: u64, leaked: bool) -> AccessRecord {
        AccessRecord {
            data_id: d.into(),
            category_id: c.into(),
            timestamp: t,
            authorized: true,
            leaked,
        }
    }

    fn req(user: &str, c: &str, d: &str, t: u64) -> AccessRequest {
        AccessRequest {
            user_id: user.into(),
            data_id: d.into(),
            category_id: c.into(),
            timestamp: t,
        }
    }

    #[test]
    fn history_status_known_and_unknown() {
        let three = UserHistory::new(
            "u1",
            vec![rec("C1", "D1", 1, false), rec("C1", "D2", 2, false), rec("C1", "D3", 3, false)],
        )
        .unwrap();
        assert_eq!(history_status(&three), Flag::Clear);
        assert_eq!(history_status(&UserHistory::empty("u1")), Flag::Raised);
        let one = UserHistory::new("u1", vec![rec("C1", "D1", 1, false)]).unwrap();
        assert_eq!(history_status(&one), Flag::Clear);
    }

    #[test]
    fn unordered_history_rejected() {
        let err = UserHistory::new("u", vec![rec("C", "D", 5, false), rec("C", "D", 4, false)]);
        assert!(err.is_err());
    }

    #[test]
    fn authorization_requires_category_and_data() {
        let auth: AuthorizationSet = [("C1", "D3"), ("C1", "D4")].into_iter().collect();
        assert_eq!(authorization_status(&req("u", "C1", "D3", 0), &auth), Flag::Clear);
        let single: AuthorizationSet = [("C1", "D3")].into_iter().collect();
        assert_eq!(authorization_status(&req("u", "C1", "D9", 0), &single), Flag::Raised);
        assert_eq!(authorization_status(&req("u", "C2", "D3", 0), &single), Flag::Raised);
    }

    #[test]
    fn authorization_set_has_set_semantics() {
        let mut auth = AuthorizationSet::new();
        assert!(auth.insert("C1", "D1"));
        assert!(!auth.insert("C1", "D1"));
        assert_eq!(auth.len(), 1);
    }

    #[test]
    fn malicious_count_respects_window() {
        let h = UserHistory::new(
            "u",
            vec![
                rec("C", "D1", 1, true),
                rec("C", "D2", 2, false),
                rec("C", "D3", 3, true),
                rec("C", "D4", 4, false),
                rec("C", "D5", 5, false),
            ],
        )
        .unwrap();
        assert_eq!(malicious_distribution_count(&h, &TimeWindow::new(0, 10).unwrap()), 2);
        assert_eq!(malicious_distribution_count(&h, &TimeWindow::new(2, 3).unwrap()), 1);
        assert_eq!(malicious_distribution_count(&h, &TimeWindow::new(6, 9).unwrap()), 0);
    }

    #[test]
    fn malicious_count_mixed_window() {
        // times 0..8; leaked at 1, 3, 4 (inside [2,6]: 3, 4) and 7 outside, plus 6 inside
        let leaked = [false, true, false, true, true, false, true, true];
        let records = leaked
            .iter()
            .enumerate()
            .map(|(t, &l)| rec("C", "D", t as u64, l))
            .collect();
        let h = UserHistory::new("u", records).unwrap();
        let w = TimeWindow::new(2, 6).unwrap();
        let oracle = h
            .records()
            .iter()
            .filter(|r| r.leaked && r.timestamp >= 2 && r.timestamp <= 6)
            .count() as u64;
        assert_eq!(oracle, 3);
        assert_eq!(malicious_distribution_count(&h, &w), oracle);
    }

    #[test]
    fn attack_factor_cases() {
        assert_eq!(attack_factor(2, 10).unwrap(), 0.2);
        assert_eq!(attack_factor(0, 7).unwrap(), 0.0);
        assert_eq!(attack_factor(0, 0).unwrap(), 0.0);
        assert!(matches!(
            attack_factor(3, 2),
            Err(Error::InconsistentCounts { malicious: 3, total: 2 })
        ));
    }

    #[test]
    fn attack_flag_is_strict() {
        let t = SecurityThresholds::default();
        assert_eq!(attack_flag(0.2, &t), Flag::Clear);
        assert_eq!(attack_flag(0.5, &t), Flag::Raised);
        assert_eq!(attack_flag(0.9, &t), Flag::Raised);
    }

    #[test]
    fn leak_flag_is_strict() {
        let t = SecurityThresholds::default();
        assert_eq!(leak_flag(0.1, &t), Flag::Clear);
        assert_eq!(leak_flag(0.3, &t), Flag::Raised);
        assert_eq!(leak_flag(1.0, &t), Flag::Raised);
    }

    #[test]
    fn leak_frequency_cases() {
        let auth: AuthorizationSet = [("C", "ok")].into_iter().collect();
        let records: Vec<_> = (0..10)
            .map(|t| rec("C", if t == 3 || t == 7 { "bad" } else { "ok" }, t, false))
            .collect();
        let h = UserHistory::new("u", records).unwrap();
        let all = TimeWindow::new(0, 9).unwrap();
        assert!((leak_frequency(&h, &auth, &all) - 0.2).abs() < 1e-15);

        let clean = UserHistory::new("u", vec![rec("C", "ok", 1, false)]).unwrap();
        assert_eq!(leak_frequency(&clean, &auth, &all), 0.0);
        let empty = TimeWindow::new(100, 200).unwrap();
        assert_eq!(leak_frequency(&h, &auth, &empty), 0.0);
    }

    #[test]
    fn thresholds_validated() {
        assert!(SecurityThresholds::new(1.5, 0.3).is_err());
        assert!(SecurityThresholds::new(0.5, -0.1).is_err());
        assert!(TimeWindow::new(3, 2).is_err());
    }

    #[test]
    fn assess_compositions() {
        let auth: AuthorizationSet = [("C1", "D1"), ("C1", "D2")].into_iter().collect();
        let w = TimeWindow::new(0, 100).unwrap();
        let t = SecurityThresholds::default();

        // ten clean accesses, one leaked: kappa 0.1, freq 0
        let records: Vec<_> = (0..10).map(|i| rec("C1", "D1", i, i == 4)).collect();
        let known = UserHistory::new("u1", records).unwrap();
        let a = assess(&req("u1", "C1", "D2", 50), &known, &auth, &w, &t).unwrap();
        assert_eq!(a.attack_factor, 0.1);
        assert_eq!(a.sigma_total, 0);
        assert_eq!(a.intent, Intent::NonMalicious);
        assert_eq!(a.risk_record.intent, Intent::NonMalicious);

        let unknown = UserHistory::empty("u1");
        let a = assess(&req("u1", "C1", "D2", 50), &unknown, &auth, &w, &t).unwrap();
        assert_eq!(a.sigma_history(), Flag::Raised);
        assert_eq!(a.sigma_total, 1);
        assert_eq!(a.intent, Intent::Malicious);

        // unauthorized request, 6 of 10 accesses leaked
        let records: Vec<_> = (0..10).map(|i| rec("C1", "D1", i, i < 6)).collect();
        let leaky = UserHistory::new("u1", records).unwrap();
        let a = assess(&req("u1", "C9", "D9", 50), &leaky, &auth, &w, &t).unwrap();
        assert_eq!(a.sigma_authorized(), Flag::Raised);
        assert_eq!(a.sigma_attack(), Flag::Raised);
        assert!(a.sigma_total >= 2);
        assert_eq!(a.intent, Intent::Malicious);
    }

    #[test]
    fn assess_rejects_mismatched_inputs() {
        let auth = AuthorizationSet::new();
        let w = TimeWindow::new(0, 10).unwrap();
        let t = SecurityThresholds::default();
        let h = UserHistory::new("u1", vec![rec("C", "D", 9, false)]).unwrap();
        assert!(assess(&req("u2", "C", "D", 10), &h, &auth, &w, &t).is_err());
        assert!(assess(&req("u1", "C", "D", 8), &h, &auth, &w, &t).is_err());
    }
}
