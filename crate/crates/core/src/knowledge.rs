//! Knowledge base of per-user access histories and authorization sets, with
//! CSV persistence.
//!
//! History CSV: `user_id,data_id,category_id,timestamp,authorized,leaked`
//! (booleans as 0/1). Authorization CSV: `user_id,category_id,data_id`.
//! Request CSV (for scoring): `user_id,data_id,category_id,timestamp`
//! followed by the twelve dataset feature columns.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::dataset::{parse_features, FEATURE_NAMES, NUM_FEATURES};
use crate::error::{Error, Result};
use crate::gate::{AccessDecision, Verdict};
use crate::ube::{self, AccessRecord, AccessRequest, AuthorizationSet, SecurityAssessment, SecurityThresholds, TimeWindow, UserHistory};

pub const HISTORY_HEADER: &str = "user_id,data_id,category_id,timestamp,authorized,leaked";
pub const AUTH_HEADER: &str = "user_id,category_id,data_id";
const REQUEST_PREFIX: [&str; 4] = ["user_id", "data_id", "category_id", "timestamp"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeBase {
    histories: BTreeMap<String, UserHistory>,
    authorizations: BTreeMap<String, AuthorizationSet>,
    /// Append denied requests to the history as unauthorized attempts.
    pub record_denied: bool,
}

/// A scoring request with its raw feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRequest {
    pub request: AccessRequest,
    pub features: [f64; NUM_FEATURES],
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str], origin: &Path) -> Result<()> {
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != expected {
        return Err(Error::Header {
            path: origin.to_path_buf(),
            expected: expected.join(","),
        });
    }
    Ok(())
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(format!("expected 0 or 1, got `{other}`")),
    }
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self {
            record_denied: true,
            ..Default::default()
        }
    }

    pub fn load(history: impl AsRef<Path>, auth: Option<&Path>) -> Result<Self> {
        let history = history.as_ref();
        let mut kb = Self::new();
        kb.read_history(File::open(history)?, history)?;
        if let Some(auth) = auth {
            kb.read_authorizations(File::open(auth)?, auth)?;
        }
        Ok(kb)
    }

    /// Adds history rows. Rows may come in any order; each user's records
    /// are sorted by timestamp, keeping file order among equal times.
    pub fn read_history<R: Read>(&mut self, r: R, origin: &Path) -> Result<()> {
        let mut rdr = reader(r);
        let expected: Vec<&str> = HISTORY_HEADER.split(',').collect();
        check_header(&mut rdr, &expected, origin)?;
        let mut by_user: BTreeMap<String, Vec<AccessRecord>> = BTreeMap::new();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line,
                message,
            };
            let timestamp = row[3]
                .parse::<u64>()
                .map_err(|_| err(format!("timestamp: expected non-negative integer, got `{}`", &row[3])))?;
            let authorized = parse_bool(&row[4]).map_err(|m| err(format!("authorized: {m}")))?;
            let leaked = parse_bool(&row[5]).map_err(|m| err(format!("leaked: {m}")))?;
            by_user.entry(row[0].to_string()).or_default().push(AccessRecord {
                data_id: row[1].to_string(),
                category_id: row[2].to_string(),
                timestamp,
                authorized,
                leaked,
            });
        }
        for (user, mut records) in by_user {
            let entry = self
                .histories
                .entry(user.clone())
                .or_insert_with(|| UserHistory::empty(user.clone()));
            let mut all = entry.records().to_vec();
            all.append(&mut records);
            all.sort_by_key(|r| r.timestamp);
            *entry = UserHistory::new(user, all)?;
        }
        Ok(())
    }

    pub fn read_authorizations<R: Read>(&mut self, r: R, origin: &Path) -> Result<()> {
        let mut rdr = reader(r);
        let expected: Vec<&str> = AUTH_HEADER.split(',').collect();
        check_header(&mut rdr, &expected, origin)?;
        for row in rdr.records() {
            let row = row?;
            self.authorizations
                .entry(row[0].to_string())
                .or_default()
                .insert(&row[1], &row[2]);
        }
        Ok(())
    }

    pub fn write_history<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(HISTORY_HEADER.split(','))?;
        for h in self.histories.values() {
            for r in h.records() {
                w.write_record([
                    h.user_id(),
                    &r.data_id,
                    &r.category_id,
                    &r.timestamp.to_string(),
                    if r.authorized { "1" } else { "0" },
                    if r.leaked { "1" } else { "0" },
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn insert_history(&mut self, history: UserHistory) {
        self.histories.insert(history.user_id().to_string(), history);
    }

    pub fn authorize(&mut self, user_id: &str, category_id: &str, data_id: &str) {
        self.authorizations
            .entry(user_id.to_string())
            .or_default()
            .insert(category_id, data_id);
    }

    /// The user's history; unknown users get an empty one.
    pub fn history(&self, user_id: &str) -> UserHistory {
        self.histories
            .get(user_id)
            .cloned()
            .unwrap_or_else(|| UserHistory::empty(user_id))
    }

    pub fn authorizations(&self, user_id: &str) -> AuthorizationSet {
        self.authorizations.get(user_id).cloned().unwrap_or_default()
    }

    pub fn assess(
        &self,
        request: &AccessRequest,
        window: &TimeWindow,
        thresholds: &SecurityThresholds,
    ) -> Result<SecurityAssessment> {
        ube::assess(
            request,
            &self.history(&request.user_id),
            &self.authorizations(&request.user_id),
            window,
            thresholds,
        )
    }

    /// Logs a decided request: granted requests always, denied ones when
    /// `record_denied` is set. Returns whether a record was appended.
    pub fn record(&mut self, decision: &AccessDecision) -> Result<bool> {
        if decision.verdict == Verdict::Denied && !self.record_denied {
            return Ok(false);
        }
        let req = &decision.request;
        let authorized = self
            .authorizations
            .get(&req.user_id)
            .is_some_and(|a| a.contains(&req.category_id, &req.data_id));
        self.histories
            .entry(req.user_id.clone())
            .or_insert_with(|| UserHistory::empty(req.user_id.clone()))
            .push(AccessRecord {
                data_id: req.data_id.clone(),
                category_id: req.category_id.clone(),
                timestamp: req.timestamp,
                authorized,
                leaked: false,
            })?;
        Ok(true)
    }
}

pub fn request_header() -> String {
    REQUEST_PREFIX
        .iter()
        .chain(FEATURE_NAMES.iter())
        .copied()
        .collect::<Vec<_>>()
        .join(",")
}

pub fn load_requests(path: impl AsRef<Path>) -> Result<Vec<ScoredRequest>> {
    let path = path.as_ref();
    read_requests(File::open(path)?, path)
}

pub fn read_requests<R: Read>(r: R, origin: &Path) -> Result<Vec<ScoredRequest>> {
    let mut rdr = reader(r);
    let header = request_header();
    let expected: Vec<&str> = header.split(',').collect();
    check_header(&mut rdr, &expected, origin)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let timestamp = row[3]
            .parse::<u64>()
            .map_err(|_| err(format!("timestamp: expected non-negative integer, got `{}`", &row[3])))?;
        let fields: Vec<&str> = row.iter().skip(REQUEST_PREFIX.len()).collect();
        let features = parse_features(&fields).map_err(err)?;
        out.push(ScoredRequest {
            request: AccessRequest {
                user_id: row[0].to_string(),
                data_id: row[1].to_string(),
                category_id: row[2].to_string(),
                timestamp,
            },
            features,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassLabel;
    use crate::gate::Reason;
    use crate::ube::{Flag, Intent};

    const HISTORY: &str = "\
user_id,data_id,category_id,timestamp,authorized,leaked
u1,D3,C1,5,1,0
u1,D1,C1,2,1,0
u2,D7,C2,3,0,1
";

    fn kb() -> KnowledgeBase {
        let mut kb = KnowledgeBase::new();
        kb.read_history(HISTORY.as_bytes(), Path::new("h.csv")).unwrap();
        kb.read_authorizations("user_id,category_id,data_id\nu1,C1,D3\nu1,C1,D1\n".as_bytes(), Path::new("a.csv"))
            .unwrap();
        kb
    }

    #[test]
    fn loads_and_sorts_history() {
        let kb = kb();
        let h = kb.history("u1");
        assert_eq!(h.records().iter().map(|r| r.timestamp).collect::<Vec<_>>(), vec![2, 5]);
        assert!(kb.history("nobody").records().is_empty());
        assert!(kb.authorizations("u1").contains("C1", "D3"));
        assert!(kb.authorizations("u2").is_empty());
    }

    #[test]
    fn history_roundtrip() {
        let kb = kb();
        let mut buf = Vec::new();
        kb.write_history(&mut buf).unwrap();
        let mut again = KnowledgeBase::new();
        again.read_history(buf.as_slice(), Path::new("x")).unwrap();
        assert_eq!(again.history("u1"), kb.history("u1"));
        assert_eq!(again.history("u2"), kb.history("u2"));
    }

    #[test]
    fn bad_rows_rejected() {
        let mut kb = KnowledgeBase::new();
        let bad = "user_id,data_id,category_id,timestamp,authorized,leaked\nu1,D1,C1,-3,1,0\n";
        assert!(matches!(
            kb.read_history(bad.as_bytes(), Path::new("h")),
            Err(Error::Parse { line: 2, .. })
        ));
        let wrong = "user,data\nu1,D1\n";
        assert!(matches!(kb.read_history(wrong.as_bytes(), Path::new("h")), Err(Error::Header { .. })));
    }

    #[test]
    fn unknown_user_assessment() {
        let kb = kb();
        let req = AccessRequest {
            user_id: "u9".into(),
            data_id: "D1".into(),
            category_id: "C1".into(),
            timestamp: 10,
        };
        let a = kb
            .assess(&req, &TimeWindow::new(0, 10).unwrap(), &SecurityThresholds::default())
            .unwrap();
        assert_eq!(a.sigma_history(), Flag::Raised);
        assert_eq!(a.intent, Intent::Malicious);
    }

    #[test]
    fn denied_requests_recorded_when_enabled() {
        let mut kb = kb();
        let decision = AccessDecision {
            request: AccessRequest {
                user_id: "u2".into(),
                data_id: "D9".into(),
                category_id: "C2".into(),
                timestamp: 20,
            },
            predicted_class: ClassLabel::Malicious,
            ube_intent: Intent::Malicious,
            sigma_total: 3,
            verdict: Verdict::Denied,
            reason: Reason::ModelMalicious,
        };
        assert!(kb.record(&decision).unwrap());
        let last = kb.history("u2").records().last().cloned().unwrap();
        assert!(!last.authorized && !last.leaked);
        kb.record_denied = false;
        assert!(!kb.record(&decision).unwrap());
        assert_eq!(kb.history("u2").records().len(), 2);
    }

    #[test]
    fn requests_parse() {
        let text = format!("{}\nu1,D3,C1,10,5,162,4,15,1,1,9,0,12,6.0,2,5\n", request_header());
        let reqs = read_requests(text.as_bytes(), Path::new("r")).unwrap();
        assert_eq!(reqs.len(), 1);
        assert_eq!(reqs[0].request.data_id, "D3");
        assert_eq!(reqs[0].features[1], 162.0);
        let bad = format!("{}\nu1,D3,C1,10,5,162,4,15,1,7,9,0,12,6.0,2,5\n", request_header());
        assert!(read_requests(bad.as_bytes(), Path::new("r")).is_err());
    }
}
