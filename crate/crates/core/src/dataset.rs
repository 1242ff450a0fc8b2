//! Session and profile ingestion, validation, and transition pairing.
//!
//! A study corpus is two delimited files. The sessions file has one row per
//! user and session with the eight questionnaire answers, the action chosen
//! in that session and the effort reported for the previous activity. The
//! profiles file has one row per user with named characteristics and the
//! (possibly missing) involvement score.
//!
//! Consecutive sessions `k` and `k + 1` of the same user form one transition
//! when session `k` carries an action and session `k + 1` reports effort.
//! Missing sessions are never bridged.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abstraction::{FeatureSet, StateId};
use crate::action::Action;
use crate::error::{Error, RejectedRow, Result};
use crate::mdp::EffortReward;

pub const N_ANSWERS: usize = 8;
pub const MAX_SESSION: u8 = 5;
pub const MAX_EFFORT: u8 = 10;
pub const INVOLVEMENT: &str = "involvement";

/// One user's answers and outcomes for one session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub user_id: String,
    /// 1-based session number, at most [`MAX_SESSION`].
    pub session_index: u8,
    /// Likert answers in 1..=5.
    pub answers: [u8; N_ANSWERS],
    /// Absent in the final session.
    pub action: Option<Action>,
    /// Effort spent on the previous session's activity, 0..=10. Absent in session 1.
    pub effort: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub characteristics: BTreeMap<String, f64>,
    /// Missing for users who dropped out before it was measured.
    pub involvement: Option<f64>,
}

impl UserProfile {
    pub fn bare(user_id: impl Into<String>) -> Self {
        UserProfile {
            user_id: user_id.into(),
            characteristics: BTreeMap::new(),
            involvement: None,
        }
    }

    /// Looks up a characteristic by name; [`INVOLVEMENT`] resolves to the involvement score.
    pub fn characteristic(&self, name: &str) -> Option<f64> {
        if name == INVOLVEMENT {
            self.involvement
        } else {
            self.characteristics.get(name).copied()
        }
    }
}

/// ⟨s, a, r, s'⟩ for one pair of consecutive sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub user_id: String,
    pub state: StateId,
    pub action: Action,
    pub reward: f64,
    pub next_state: StateId,
}

/// A consecutive session pair before abstraction and reward mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTransition {
    pub user_id: String,
    pub from_session: u8,
    pub answers: [u8; N_ANSWERS],
    pub action: Action,
    pub effort: u8,
    pub next_answers: [u8; N_ANSWERS],
}

/// Column names of the sessions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSchema {
    pub user_id: String,
    pub session_index: String,
    pub action: String,
    pub effort: String,
    pub answers: Vec<String>,
}

impl Default for SessionSchema {
    fn default() -> Self {
        SessionSchema {
            user_id: "user_id".into(),
            session_index: "session_index".into(),
            action: "action".into(),
            effort: "effort".into(),
            answers: (1..=N_ANSWERS).map(|i| format!("q{i}")).collect(),
        }
    }
}

/// Parsed rows together with every row that was rejected.
#[derive(Debug, Clone)]
pub struct Ingest<T> {
    pub records: Vec<T>,
    pub rejected: Vec<RejectedRow>,
}

impl<T> Ingest<T> {
    /// Fails with [`Error::Rejected`] if any row was rejected.
    pub fn strict(self) -> Result<Vec<T>> {
        if self.rejected.is_empty() {
            Ok(self.records)
        } else {
            Err(Error::Rejected(self.rejected))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProfileTable {
    pub characteristic_names: Vec<String>,
    pub profiles: Vec<UserProfile>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))
}

pub fn parse_sessions(path: &Path, schema: &SessionSchema) -> Result<Ingest<SessionRecord>> {
    read_sessions(open(path)?, schema)
}

pub fn read_sessions<R: Read>(input: R, schema: &SessionSchema) -> Result<Ingest<SessionRecord>> {
    if schema.answers.len() != N_ANSWERS {
        return Err(Error::InvalidConfig(format!(
            "schema must name {N_ANSWERS} answer columns, got {}",
            schema.answers.len()
        )));
    }
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let user_col = column_index(&headers, &schema.user_id)?;
    let session_col = column_index(&headers, &schema.session_index)?;
    let action_col = column_index(&headers, &schema.action)?;
    let effort_col = column_index(&headers, &schema.effort)?;
    let answer_cols = schema
        .answers
        .iter()
        .map(|name| column_index(&headers, name))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut seen: HashSet<(String, u8)> = HashSet::new();

    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let reject = |column: Option<&str>, reason: String| RejectedRow {
            line,
            column: column.map(str::to_string),
            reason,
        };
        if row.len() != headers.len() {
            rejected.push(reject(
                None,
                format!("expected {} fields, found {}", headers.len(), row.len()),
            ));
            continue;
        }

        let user_id = &row[user_col];
        if user_id.is_empty() {
            rejected.push(reject(Some(&schema.user_id), "empty user id".into()));
            continue;
        }
        let session_index = match row[session_col].parse::<u8>() {
            Ok(v) if (1..=MAX_SESSION).contains(&v) => v,
            _ => {
                rejected.push(reject(
                    Some(&schema.session_index),
                    format!("session index `{}` is not in 1..={MAX_SESSION}", &row[session_col]),
                ));
                continue;
            }
        };

        let mut answers = [0u8; N_ANSWERS];
        let mut bad_answer = None;
        for (slot, (&col, name)) in answers.iter_mut().zip(answer_cols.iter().zip(&schema.answers)) {
            match row[col].parse::<u8>() {
                Ok(v) if (1..=5).contains(&v) => *slot = v,
                _ if row[col].is_empty() => {
                    bad_answer = Some(reject(Some(name), "missing Likert answer".into()));
                    break;
                }
                _ => {
                    bad_answer = Some(reject(
                        Some(name),
                        format!("Likert value `{}` is not in 1..=5", &row[col]),
                    ));
                    break;
                }
            }
        }
        if let Some(r) = bad_answer {
            rejected.push(r);
            continue;
        }

        let action = match &row[action_col] {
            "" => None,
            s => match s.parse::<Action>() {
                Ok(a) => Some(a),
                Err(msg) => {
                    rejected.push(reject(Some(&schema.action), msg));
                    continue;
                }
            },
        };
        let effort = match &row[effort_col] {
            "" => None,
            s => match s.parse::<u8>() {
                Ok(v) if v <= MAX_EFFORT => Some(v),
                _ => {
                    rejected.push(reject(
                        Some(&schema.effort),
                        format!("effort `{s}` is not in 0..={MAX_EFFORT}"),
                    ));
                    continue;
                }
            },
        };

        if !seen.insert((user_id.to_string(), session_index)) {
            rejected.push(reject(
                Some(&schema.session_index),
                format!("duplicate session {session_index} for user `{user_id}`"),
            ));
            continue;
        }

        records.push(SessionRecord {
            user_id: user_id.to_string(),
            session_index,
            answers,
            action,
            effort,
        });
    }
    Ok(Ingest { records, rejected })
}

pub fn parse_profiles(path: &Path) -> Result<Ingest<UserProfile>> {
    read_profiles(open(path)?).map(|(_, ingest)| ingest)
}

/// Reads a profiles file. Every column other than `user_id` and
/// `involvement` is a characteristic, in header order.
pub fn read_profiles<R: Read>(input: R) -> Result<(Vec<String>, Ingest<UserProfile>)> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let user_col = column_index(&headers, "user_id")?;
    let inv_col = column_index(&headers, INVOLVEMENT)?;
    let char_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != user_col && i != inv_col)
        .map(|(i, h)| (i, h.to_string()))
        .collect();
    {
        let mut names = HashSet::new();
        for (_, name) in &char_cols {
            if !names.insert(name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate profile column `{name}`")));
            }
        }
    }

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    'rows: for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != headers.len() {
            rejected.push(RejectedRow {
                line,
                column: None,
                reason: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
            continue;
        }
        let user_id = row[user_col].to_string();
        if user_id.is_empty() {
            rejected.push(RejectedRow {
                line,
                column: Some("user_id".into()),
                reason: "empty user id".into(),
            });
            continue;
        }
        let mut characteristics = BTreeMap::new();
        for (col, name) in &char_cols {
            match row[*col].parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    characteristics.insert(name.clone(), v);
                }
                _ => {
                    rejected.push(RejectedRow {
                        line,
                        column: Some(name.clone()),
                        reason: format!("`{}` is not a finite number", &row[*col]),
                    });
                    continue 'rows;
                }
            }
        }
        let involvement = match &row[inv_col] {
            "" => None,
            s => match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    rejected.push(RejectedRow {
                        line,
                        column: Some(INVOLVEMENT.into()),
                        reason: format!("`{s}` is not a finite number"),
                    });
                    continue;
                }
            },
        };
        if !seen.insert(user_id.clone()) {
            rejected.push(RejectedRow {
                line,
                column: Some("user_id".into()),
                reason: format!("duplicate profile for user `{user_id}`"),
            });
            continue;
        }
        records.push(UserProfile {
            user_id,
            characteristics,
            involvement,
        });
    }
    let names = char_cols.into_iter().map(|(_, n)| n).collect();
    Ok((names, Ingest { records, rejected }))
}

/// An immutable, validated study corpus.
///
/// Sessions are kept sorted by `(user_id, session_index)` and profiles by
/// `user_id`, so every derived quantity is independent of input row order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    answer_names: Vec<String>,
    characteristic_names: Vec<String>,
    sessions: Vec<SessionRecord>,
    profiles: Vec<UserProfile>,
}

impl Dataset {
    /// Builds a corpus from sessions and profiles.
    ///
    /// Every session user must have a profile, and every profile must carry
    /// exactly `characteristic_names`.
    pub fn new(
        answer_names: Vec<String>,
        mut sessions: Vec<SessionRecord>,
        characteristic_names: Vec<String>,
        mut profiles: Vec<UserProfile>,
    ) -> Result<Dataset> {
        if answer_names.len() != N_ANSWERS {
            return Err(Error::InvalidDataset(format!(
                "expected {N_ANSWERS} answer names, got {}",
                answer_names.len()
            )));
        }
        if characteristic_names.iter().any(|n| n == INVOLVEMENT) {
            return Err(Error::InvalidDataset(
                "`involvement` is not a pre-characteristic".into(),
            ));
        }
        sessions.sort_by(|a, b| {
            (a.user_id.as_str(), a.session_index).cmp(&(b.user_id.as_str(), b.session_index))
        });
        for w in sessions.windows(2) {
            if w[0].user_id == w[1].user_id && w[0].session_index == w[1].session_index {
                return Err(Error::InvalidDataset(format!(
                    "duplicate session {} for user `{}`",
                    w[0].session_index, w[0].user_id
                )));
            }
        }
        for s in &sessions {
            if !(1..=MAX_SESSION).contains(&s.session_index)
                || s.answers.iter().any(|a| !(1..=5).contains(a))
                || s.effort.is_some_and(|e| e > MAX_EFFORT)
            {
                return Err(Error::InvalidDataset(format!(
                    "session {} of user `{}` violates record bounds",
                    s.session_index, s.user_id
                )));
            }
        }

        profiles.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        for w in profiles.windows(2) {
            if w[0].user_id == w[1].user_id {
                return Err(Error::InvalidDataset(format!(
                    "duplicate profile for `{}`",
                    w[0].user_id
                )));
            }
        }
        let declared: BTreeSet<&str> = characteristic_names.iter().map(String::as_str).collect();
        for p in &profiles {
            let present: BTreeSet<&str> = p.characteristics.keys().map(String::as_str).collect();
            if present != declared {
                return Err(Error::InvalidDataset(format!(
                    "profile `{}` does not carry exactly the declared characteristics",
                    p.user_id
                )));
            }
        }
        let ds = Dataset {
            answer_names,
            characteristic_names,
            sessions,
            profiles,
        };
        for user in ds.session_users() {
            if ds.profile(user).is_none() {
                return Err(Error::InvalidDataset(format!("user `{user}` has no profile")));
            }
        }
        Ok(ds)
    }

    /// Builds a corpus without characteristics; every session user gets a
    /// bare profile.
    pub fn from_sessions(answer_names: Vec<String>, sessions: Vec<SessionRecord>) -> Result<Dataset> {
        let users: BTreeSet<&str> = sessions.iter().map(|s| s.user_id.as_str()).collect();
        let profiles = users.into_iter().map(UserProfile::bare).collect();
        Dataset::new(answer_names, sessions, Vec::new(), profiles)
    }

    /// Reads both files. In lenient mode rejected rows are returned next to
    /// the dataset instead of failing the load.
    pub fn load(
        sessions_path: &Path,
        profiles_path: Option<&Path>,
        schema: &SessionSchema,
        lenient: bool,
    ) -> Result<(Dataset, Vec<RejectedRow>)> {
        let sessions = parse_sessions(sessions_path, schema)?;
        let mut rejected = sessions.rejected.clone();
        let sessions = if lenient {
            sessions.records
        } else {
            sessions.strict()?
        };
        let ds = match profiles_path {
            None => Dataset::from_sessions(schema.answers.clone(), sessions)?,
            Some(p) => {
                let (names, profiles) = read_profiles(open(p)?)?;
                rejected.extend(profiles.rejected.iter().cloned());
                let profiles = if lenient {
                    profiles.records
                } else {
                    profiles.strict()?
                };
                let sessions = if lenient {
                    let known: HashSet<&str> = profiles.iter().map(|p| p.user_id.as_str()).collect();
                    sessions
                        .into_iter()
                        .filter(|s| known.contains(s.user_id.as_str()))
                        .collect()
                } else {
                    sessions
                };
                Dataset::new(schema.answers.clone(), sessions, names, profiles)?
            }
        };
        Ok((ds, rejected))
    }

    pub fn answer_names(&self) -> &[String] {
        &self.answer_names
    }

    pub fn characteristic_names(&self) -> &[String] {
        &self.characteristic_names
    }

    pub fn sessions(&self) -> &[SessionRecord] {
        &self.sessions
    }

    pub fn profiles(&self) -> &[UserProfile] {
        &self.profiles
    }

    pub fn profile(&self, user_id: &str) -> Option<&UserProfile> {
        self.profiles
            .binary_search_by(|p| p.user_id.as_str().cmp(user_id))
            .ok()
            .map(|i| &self.profiles[i])
    }

    /// Distinct users that have at least one session, in sorted order.
    pub fn session_users(&self) -> impl Iterator<Item = &str> {
        let mut last: Option<&str> = None;
        self.sessions.iter().filter_map(move |s| {
            if last == Some(s.user_id.as_str()) {
                None
            } else {
                last = Some(s.user_id.as_str());
                last
            }
        })
    }

    /// Sessions grouped per user (sorted by session index within a group).
    pub fn sessions_by_user(&self) -> impl Iterator<Item = &[SessionRecord]> {
        self.sessions.chunk_by(|a, b| a.user_id == b.user_id)
    }

    /// Mean over every reported effort, or `None` when nobody reported one.
    pub fn mean_effort(&self) -> Option<f64> {
        mean(self.sessions.iter().filter_map(|s| s.effort.map(f64::from)))
    }

    /// Every valid consecutive session pair, ordered by user then session.
    pub fn raw_transitions(&self) -> Vec<RawTransition> {
        let mut out = Vec::new();
        for user in self.sessions_by_user() {
            for w in user.windows(2) {
                let (cur, next) = (&w[0], &w[1]);
                if next.session_index != cur.session_index + 1 {
                    log::debug!(
                        "user `{}`: session {} follows {}, pair skipped",
                        cur.user_id,
                        next.session_index,
                        cur.session_index
                    );
                    continue;
                }
                if let (Some(action), Some(effort)) = (cur.action, next.effort) {
                    out.push(RawTransition {
                        user_id: cur.user_id.clone(),
                        from_session: cur.session_index,
                        answers: cur.answers,
                        action,
                        effort,
                        next_answers: next.answers,
                    });
                }
            }
        }
        out
    }

    pub fn write_sessions<W: Write>(&self, out: W, schema: &SessionSchema) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            schema.user_id.as_str(),
            schema.session_index.as_str(),
            schema.action.as_str(),
            schema.effort.as_str(),
        ];
        header.extend(schema.answers.iter().map(String::as_str));
        w.write_record(&header)?;
        for s in &self.sessions {
            let mut row = vec![
                s.user_id.clone(),
                s.session_index.to_string(),
                s.action.map(|a| a.index().to_string()).unwrap_or_default(),
                s.effort.map(|e| e.to_string()).unwrap_or_default(),
            ];
            row.extend(s.answers.iter().map(u8::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<sessions output>", e))
    }

    pub fn write_profiles<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["user_id"];
        header.extend(self.characteristic_names.iter().map(String::as_str));
        header.push(INVOLVEMENT);
        w.write_record(&header)?;
        for p in &self.profiles {
            let mut row = vec![p.user_id.clone()];
            row.extend(self.characteristic_names.iter().map(|n| p.characteristics[n].to_string()));
            row.push(p.involvement.map(|v| v.to_string()).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<profiles output>", e))
    }
}

pub(crate) fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Projects each raw pair through `features` and maps the reported effort to
/// a reward.
pub fn project_transitions(
    raw: &[RawTransition],
    answer_names: &[String],
    features: &FeatureSet,
    reward: &EffortReward,
) -> Result<Vec<TransitionSample>> {
    let projector = features.answer_projector(answer_names)?;
    raw.iter()
        .map(|t| {
            Ok(TransitionSample {
                user_id: t.user_id.clone(),
                state: projector.project(&t.answers),
                action: t.action,
                reward: reward.reward(f64::from(t.effort))?,
                next_state: projector.project(&t.next_answers),
            })
        })
        .collect()
}

/// One sample per valid consecutive session pair of each user.
pub fn pair_transitions(
    dataset: &Dataset,
    features: &FeatureSet,
    reward: &EffortReward,
) -> Result<Vec<TransitionSample>> {
    project_transitions(&dataset.raw_transitions(), &dataset.answer_names, features, reward)
}

/// Summary counts for a corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub users: usize,
    pub profiles: usize,
    pub sessions: usize,
    pub transitions: usize,
    pub users_with_transitions: usize,
    pub effort_reports: usize,
    pub mean_effort: Option<f64>,
    pub involvement_present: usize,
    pub involvement_missing: usize,
    pub rejected_rows: usize,
    /// Mean of each questionnaire item over all sessions.
    pub answer_means: Vec<(String, f64)>,
}

pub fn validate(dataset: &Dataset) -> ValidationReport {
    let raw = dataset.raw_transitions();
    let users_with_transitions = raw
        .iter()
        .map(|t| t.user_id.as_str())
        .collect::<BTreeSet<_>>()
        .len();
    let answer_means = dataset
        .answer_names
        .iter()
        .enumerate()
        .filter_map(|(j, name)| {
            mean(dataset.sessions.iter().map(|s| f64::from(s.answers[j]))).map(|m| (name.clone(), m))
        })
        .collect();
    let involvement_present = dataset.profiles.iter().filter(|p| p.involvement.is_some()).count();
    ValidationReport {
        users: dataset.session_users().count(),
        profiles: dataset.profiles.len(),
        sessions: dataset.sessions.len(),
        transitions: raw.len(),
        users_with_transitions,
        effort_reports: dataset.sessions.iter().filter(|s| s.effort.is_some()).count(),
        mean_effort: dataset.mean_effort(),
        involvement_present,
        involvement_missing: dataset.profiles.len() - involvement_present,
        rejected_rows: 0,
        answer_means,
    }
}

impl ValidationReport {
    /// `key = value` lines in a fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("users", self.users.to_string());
        kv("profiles", self.profiles.to_string());
        kv("sessions", self.sessions.to_string());
        kv("transitions", self.transitions.to_string());
        kv("users_with_transitions", self.users_with_transitions.to_string());
        kv("effort_reports", self.effort_reports.to_string());
        kv(
            "mean_effort",
            self.mean_effort.map(|m| format!("{m:.6}")).unwrap_or_else(|| "none".into()),
        );
        kv("involvement_present", self.involvement_present.to_string());
        kv("involvement_missing", self.involvement_missing.to_string());
        kv("rejected_rows", self.rejected_rows.to_string());
        for (name, m) in &self.answer_means {
            kv(&format!("answer_mean.{name}"), format!("{m:.6}"));
        }
        out
    }
}
