//! Wire protocol version 1 for candidate-scoring services.
//!
//! `POST /v1/score` takes a [`ScoreRequest`] and answers with a [`ScoreResponse`];
//! `GET /v1/info` answers with [`BackendInfo`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::item_bank::ResponseChoice;
use crate::prompt::RenderMode;

pub const PROTOCOL_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub protocol_version: String,
    pub request_id: String,
    pub mode: RenderMode,
    /// Masked mode: context plus stem, containing the backend's mask token once.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Sequence mode: five full texts in never..always order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texts: Option<Vec<String>>,
    /// Masked mode: the five fills in never..always order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub model_hints: BTreeMap<String, serde_json::Value>,
}

impl ScoreRequest {
    pub fn masked(request_id: impl Into<String>, text: String, candidates: Vec<String>) -> Self {
        ScoreRequest {
            protocol_version: PROTOCOL_VERSION.to_string(),
            request_id: request_id.into(),
            mode: RenderMode::MaskedSlot,
            text: Some(text),
            texts: None,
            candidates: Some(candidates),
            model_hints: BTreeMap::new(),
        }
    }

    pub fn sequence(request_id: impl Into<String>, texts: Vec<String>) -> Self {
        ScoreRequest {
            protocol_version: PROTOCOL_VERSION.to_string(),
            request_id: request_id.into(),
            mode: RenderMode::CandidateSentences,
            text: None,
            texts: Some(texts),
            candidates: None,
            model_hints: BTreeMap::new(),
        }
    }

    /// Checks that exactly five alternatives can be derived for the request's mode.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Rejected(format!("request {}: {m}", self.request_id)));
        if self.protocol_version != PROTOCOL_VERSION {
            return Err(Error::ProtocolMismatch {
                expected: PROTOCOL_VERSION.into(),
                found: self.protocol_version.clone(),
            });
        }
        match self.mode {
            RenderMode::MaskedSlot => {
                if self.text.as_deref().is_none_or(str::is_empty) {
                    return bad("masked mode needs a non-empty text");
                }
                match &self.candidates {
                    Some(c) if c.len() == 5 => Ok(()),
                    _ => bad("masked mode needs exactly 5 candidates"),
                }
            }
            RenderMode::CandidateSentences => match &self.texts {
                Some(t) if t.len() == 5 => Ok(()),
                _ => bad("sequence mode needs exactly 5 texts"),
            },
        }
    }

    /// Everything that determines the backend's answer, in a stable order.
    pub(crate) fn content_parts(&self) -> Vec<&str> {
        let mut parts = vec![self.mode.wire_name()];
        if let Some(t) = &self.text {
            parts.push(t);
        }
        for list in [&self.texts, &self.candidates].into_iter().flatten() {
            parts.extend(list.iter().map(String::as_str));
        }
        parts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    /// One log-score per alternative, aligned with never..always.
    pub log_scores: Vec<f64>,
    #[serde(default)]
    pub truncated: bool,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol_version: Option<String>,
}

impl ScoreResponse {
    pub fn validate(&self) -> Result<()> {
        if let Some(v) = &self.protocol_version {
            if v != PROTOCOL_VERSION {
                return Err(Error::ProtocolMismatch {
                    expected: PROTOCOL_VERSION.into(),
                    found: v.clone(),
                });
            }
        }
        if self.log_scores.len() != 5 {
            return Err(Error::BadResponse(format!(
                "expected 5 log scores, got {}",
                self.log_scores.len()
            )));
        }
        if self.log_scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteScore);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub model_id: String,
    pub max_tokens: usize,
    /// Present for masked-LM backends.
    #[serde(default)]
    pub mask_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol_version: Option<String>,
}

/// Picks the highest-scoring choice; ties go to the lower-valued choice.
pub fn select_choice(response: &ScoreResponse) -> ResponseChoice {
    let mut best = 0;
    for (i, s) in response.log_scores.iter().enumerate().take(5) {
        if *s > response.log_scores[best] {
            best = i;
        }
    }
    ResponseChoice::ALL[best]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(scores: [f64; 5]) -> ScoreResponse {
        ScoreResponse {
            log_scores: scores.to_vec(),
            truncated: false,
            model_id: "m".into(),
            protocol_version: None,
        }
    }

    #[test]
    fn argmax_and_ties() {
        assert_eq!(
            select_choice(&resp([0.0, 0.0, 1.0, 0.0, 0.0])),
            ResponseChoice::Sometimes
        );
        assert_eq!(select_choice(&resp([0.0; 5])), ResponseChoice::Never);
        assert_eq!(select_choice(&resp([0.0, 2.0, 1.0, 2.0, -1.0])), ResponseChoice::Rarely);
    }

    #[test]
    fn response_validation() {
        assert!(resp([0.0; 5]).validate().is_ok());
        assert!(matches!(
            resp([0.0, f64::NAN, 0.0, 0.0, 0.0]).validate(),
            Err(Error::NonFiniteScore)
        ));
        let mut short = resp([0.0; 5]);
        short.log_scores.pop();
        assert!(matches!(short.validate(), Err(Error::BadResponse(_))));
        let mut v2 = resp([0.0; 5]);
        v2.protocol_version = Some("2".into());
        assert!(matches!(v2.validate(), Err(Error::ProtocolMismatch { .. })));
    }

    #[test]
    fn request_wire_shape() {
        let req = ScoreRequest::masked(
            "q1",
            "I am [MASK] shy.".into(),
            ResponseChoice::ALL.map(|c| c.label().to_string()).to_vec(),
        );
        let json = serde_json::to_value(&req).unwrap();
        assert_eq!(json["protocol_version"], "1");
        assert_eq!(json["mode"], "masked");
        assert_eq!(json["candidates"][4], "always");
        assert!(json.get("texts").is_none());
        req.validate().unwrap();

        let seq = ScoreRequest::sequence("q2", vec!["a".into(); 4]);
        assert!(seq.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn argmax_invariant_under_shift_and_scale(
            scores in proptest::array::uniform5(-50.0f64..50.0),
            shift in -100.0f64..100.0,
            log_scale in -3.0f64..3.0,
        ) {
            // Rounding can merge near-ties after a shift; only check well-separated inputs.
            let separated = scores.iter().all(|a| {
                scores.iter().all(|b| a == b || (a - b).abs() > 1e-6)
            });
            proptest::prop_assume!(separated);
            let base = select_choice(&resp(scores));
            proptest::prop_assert_eq!(base, select_choice(&resp(scores.map(|s| s + shift))));
            // Scaling probabilities by c > 0 adds ln(c) to every log score.
            proptest::prop_assert_eq!(base, select_choice(&resp(scores.map(|s| s + log_scale))));
        }
    }
}
