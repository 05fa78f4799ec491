//! Line-delimited JSON messages exchanged with forecasting adapters.
//!
//! Every line is one object carrying the protocol version `v` and a `type`:
//!
//! ```text
//! → {"v":1,"type":"hello"}
//! ← {"v":1,"type":"info","name":"echo","max_context":4096,"freqs":["H","D","W","M"]}
//! → {"v":1,"type":"forecast","id":"r1","series":"s","context":[1.0,2.0],"h":3,"freq":"H","m":24}
//! ← {"v":1,"type":"result","id":"r1","point":[2.0,2.0,2.0],"ms":0}
//! ← {"v":1,"type":"error","id":"r1","msg":"..."}
//! ```

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v: u32,
    #[serde(flatten)]
    pub body: Message,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello,
    Info {
        name: String,
        max_context: usize,
        freqs: Vec<String>,
    },
    Forecast {
        id: String,
        series: String,
        context: Vec<f64>,
        h: usize,
        freq: String,
        m: usize,
    },
    Result {
        id: String,
        point: Vec<f64>,
        ms: u64,
    },
    Error {
        id: String,
        msg: String,
    },
}

impl Envelope {
    pub fn new(body: Message) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            body,
        }
    }

    /// One wire line, without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }

    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim_end_matches(['\r', '\n']))
    }
}

/// Best-effort request id of a line that failed to parse as a full message.
pub fn salvage_id(line: &str) -> String {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_string))
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_layout_is_exact() {
        assert_eq!(Envelope::new(Message::Hello).to_line(), r#"{"v":1,"type":"hello"}"#);
        let req = Envelope::new(Message::Forecast {
            id: "r1".into(),
            series: "s".into(),
            context: vec![1.0, 2.5],
            h: 3,
            freq: "H".into(),
            m: 24,
        });
        assert_eq!(
            req.to_line(),
            r#"{"v":1,"type":"forecast","id":"r1","series":"s","context":[1.0,2.5],"h":3,"freq":"H","m":24}"#
        );
        let res = Envelope::new(Message::Result {
            id: "r1".into(),
            point: vec![2.5],
            ms: 7,
        });
        assert_eq!(res.to_line(), r#"{"v":1,"type":"result","id":"r1","point":[2.5],"ms":7}"#);
        let err = Envelope::new(Message::Error {
            id: "r1".into(),
            msg: "boom".into(),
        });
        assert_eq!(err.to_line(), r#"{"v":1,"type":"error","id":"r1","msg":"boom"}"#);
        let info = Envelope::new(Message::Info {
            name: "echo".into(),
            max_context: 512,
            freqs: vec!["H".into(), "D".into(), "W".into(), "M".into()],
        });
        assert_eq!(
            info.to_line(),
            r#"{"v":1,"type":"info","name":"echo","max_context":512,"freqs":["H","D","W","M"]}"#
        );
    }

    #[test]
    fn parse_roundtrip_and_salvage() {
        let line = r#"{"v":1,"type":"result","id":"x","point":[0.1,1e300],"ms":3}"#;
        let env = Envelope::parse(line).unwrap();
        assert_eq!(
            env.body,
            Message::Result {
                id: "x".into(),
                point: vec![0.1, 1e300],
                ms: 3
            }
        );
        assert!(Envelope::parse(r#"{"v":1,"type":"nope"}"#).is_err());
        assert_eq!(salvage_id(r#"{"id":"abc","type":"forecast"}"#), "abc");
        assert_eq!(salvage_id("garbage"), "");
    }
}
