//! Chat-completions JSON wire format.
//!
//! Request:
//! `{model, messages: [{role, content: [{type: "text", text} | {type: "image", media_type, data}]}],
//!   temperature, seed?, max_tokens, logprobs}` with images base64-inlined.
//! Response: `choices[0].message.content` (a string or a list of text parts)
//! and optionally `choices[0].logprobs.content[{token, logprob}]`.

use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{ChatRequest, GatewayError, Speaker, TokenLogprob};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub model: String,
    pub messages: Vec<WireMessage>,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub max_tokens: u32,
    pub logprobs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub role: String,
    pub content: Vec<WirePart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WirePart {
    Text { text: String },
    Image { media_type: String, data: String },
}

pub fn to_wire(request: &ChatRequest, model: &str) -> WireRequest {
    let engine = base64::engine::general_purpose::STANDARD;
    WireRequest {
        model: model.to_string(),
        messages: request
            .messages
            .iter()
            .map(|m| {
                let mut content: Vec<WirePart> = m
                    .attachments
                    .iter()
                    .map(|a| WirePart::Image { media_type: a.image.media_type.mime().to_string(), data: engine.encode(&a.bytes) })
                    .collect();
                content.push(WirePart::Text { text: m.text.clone() });
                WireMessage {
                    role: match m.speaker {
                        Speaker::System => "system",
                        Speaker::User => "user",
                        Speaker::Assistant => "assistant",
                    }
                    .to_string(),
                    content,
                }
            })
            .collect(),
        temperature: request.temperature,
        seed: request.sampling_seed,
        max_tokens: request.max_tokens,
        logprobs: request.want_logprobs,
    }
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireReply,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Debug, Deserialize)]
struct WireReply {
    #[serde(default)]
    content: Option<WireContent>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum WireContent {
    Text(String),
    Parts(Vec<WireReplyPart>),
}

#[derive(Debug, Deserialize)]
struct WireReplyPart {
    #[serde(default)]
    text: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

/// Parsed body: the reply text and, when requested, token logprobs.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReply {
    pub text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
}

pub fn parse_response(body: &[u8]) -> Result<ParsedReply, GatewayError> {
    let response: WireResponse =
        serde_json::from_slice(body).map_err(|e| GatewayError::Protocol(format!("malformed response body: {e}")))?;
    let choice = response
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
    let text = match choice.message.content {
        Some(WireContent::Text(t)) => t,
        Some(WireContent::Parts(parts)) => parts.into_iter().filter_map(|p| p.text).collect::<Vec<_>>().join(""),
        None => String::new(),
    };
    Ok(ParsedReply { text, token_logprobs: choice.logprobs.and_then(|l| l.content) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, ModelRole, RequestPurpose};
    use crate::testing::fixture_image;

    #[test]
    fn request_shape() {
        let image = fixture_image("c", 0);
        let request = ChatRequest::new(
            ModelRole::Base,
            RequestPurpose::CaptionAnswer,
            vec![ChatMessage::system("be brief"), ChatMessage::user_with_image("Describe this image.", image)],
        )
        .temperature(0.2)
        .seed(9);
        let json = serde_json::to_value(to_wire(&request, "qwen")).unwrap();
        assert_eq!(json["model"], "qwen");
        assert_eq!(json["seed"], 9);
        assert_eq!(json["messages"][0]["role"], "system");
        assert_eq!(json["messages"][1]["content"][0]["type"], "image");
        assert_eq!(json["messages"][1]["content"][0]["media_type"], "image/png");
        assert_eq!(json["messages"][1]["content"][1]["type"], "text");
        assert_eq!(json["messages"][1]["content"][1]["text"], "Describe this image.");
        assert_eq!(json["logprobs"], false);
    }

    #[test]
    fn parses_string_and_part_content() {
        let a = parse_response(br#"{"choices":[{"message":{"content":"hi"}}]}"#).unwrap();
        assert_eq!(a.text, "hi");
        let b = parse_response(br#"{"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"text","text":"b"}]},
            "logprobs":{"content":[{"token":"a","logprob":-0.1}]}}]}"#)
        .unwrap();
        assert_eq!(b.text, "ab");
        assert_eq!(b.token_logprobs.unwrap()[0].logprob, -0.1);
    }

    #[test]
    fn malformed_bodies_are_protocol_errors() {
        assert!(matches!(parse_response(b"not json"), Err(GatewayError::Protocol(_))));
        assert!(matches!(parse_response(br#"{"choices":[]}"#), Err(GatewayError::Protocol(_))));
    }
}
