//! HTTP providers speaking the common JSON chat-completion and embeddings
//! wire formats.
//!
//! Chat request: `{"model": ..., "messages": [{"role", "content"}],
//! "logprobs": bool}`; response: `{"choices": [{"message": {"content"},
//! "logprobs": {"content": [{"token", "logprob"}]}}]}`. The call's log-prob
//! is the mean token log-prob when the server returns them. Reference
//! log-probs and value estimates are not available over this interface.
//!
//! Embedding request: `{"input": [texts], "model": ...}`; response:
//! `{"data": [{"index", "embedding"}]}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatCall, ChatOutcome, ChatProvider, EmbeddingProvider, ProviderError};
use crate::retriever::Vector;

fn client() -> Result<reqwest::blocking::Client, ProviderError> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .map_err(|e| ProviderError::Transport(e.to_string()))
}

pub struct HttpLlm {
    endpoint: String,
    model: String,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatWireRequest<'a> {
    model: &'a str,
    messages: &'a [super::ChatMessage],
    logprobs: bool,
}

#[derive(Deserialize)]
struct ChatWireResponse {
    choices: Vec<ChatWireChoice>,
}

#[derive(Deserialize)]
struct ChatWireChoice {
    message: ChatWireMessage,
    #[serde(default)]
    logprobs: Option<ChatWireLogprobs>,
}

#[derive(Deserialize)]
struct ChatWireMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatWireLogprobs {
    #[serde(default)]
    content: Vec<ChatWireTokenLogprob>,
}

#[derive(Deserialize)]
struct ChatWireTokenLogprob {
    logprob: f64,
}

impl HttpLlm {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
    ) -> Result<Self, ProviderError> {
        Ok(Self {
            endpoint: endpoint.into(),
            model: model.into(),
            client: client()?,
        })
    }
}

impl ChatProvider for HttpLlm {
    fn chat(&self, call: &ChatCall) -> Result<ChatOutcome, ProviderError> {
        let body = ChatWireRequest {
            model: &self.model,
            messages: &call.messages,
            logprobs: call.want_logprobs,
        };
        let response: ChatWireResponse = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?
            .error_for_status()
            .map_err(|e| ProviderError::Transport(e.to_string()))?
            .json()
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        let choice = response
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::MalformedResponse("no choices".into()))?;
        let log_prob = choice.logprobs.and_then(|lp| {
            if lp.content.is_empty() {
                None
            } else {
                Some(lp.content.iter().map(|t| t.logprob).sum::<f64>() / lp.content.len() as f64)
            }
        });
        Ok(ChatOutcome {
            content: choice.message.content,
            log_prob,
            ref_log_prob: None,
            value: None,
        })
    }
}

pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbedWireRequest<'a> {
    input: &'a [&'a str],
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbedWireResponse {
    data: Vec<EmbedWireItem>,
}

#[derive(Deserialize)]
struct EmbedWireItem {
    index: usize,
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
    ) -> Result<Self, ProviderError> {
        Ok(Self {
            endpoint: endpoint.into(),
            model: model.into(),
            client: client()?,
        })
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vector>, ProviderError> {
        let body = EmbedWireRequest {
            input: texts,
            model: &self.model,
        };
        let mut response: EmbedWireResponse = self
            .client
            .post(&self.endpoint)
            .json(&body)
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?
            .error_for_status()
            .map_err(|e| ProviderError::Transport(e.to_string()))?
            .json()
            .map_err(|e| ProviderError::MalformedResponse(e.to_string()))?;
        if response.data.len() != texts.len() {
            return Err(ProviderError::MalformedResponse(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                response.data.len()
            )));
        }
        response.data.sort_by_key(|d| d.index);
        Ok(response
            .data
            .into_iter()
            .map(|d| Vector::new(d.embedding))
            .collect())
    }

    fn dim(&self) -> Option<usize> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::ChatMessage;
    use std::io::{Read, Write};
    use std::net::TcpListener;

    /// Minimal one-shot HTTP server: capture the request, send a canned
    /// JSON body, and hand the captured request back for assertions.
    fn one_shot_server(response_body: &'static str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; 65536];
            let mut captured = String::new();
            loop {
                let n = stream.read(&mut buf).unwrap();
                captured.push_str(&String::from_utf8_lossy(&buf[..n]));
                if let Some(header_end) = captured.find("\r\n\r\n") {
                    let content_len = captured
                        .lines()
                        .find_map(|l| {
                            l.to_ascii_lowercase()
                                .strip_prefix("content-length:")
                                .map(|v| v.trim().parse::<usize>().unwrap())
                        })
                        .unwrap_or(0);
                    if captured.len() >= header_end + 4 + content_len {
                        break;
                    }
                }
            }
            let reply = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                response_body.len(),
                response_body
            );
            stream.write_all(reply.as_bytes()).unwrap();
            captured
        });
        (format!("http://{addr}/v1/chat"), handle)
    }

    #[test]
    fn chat_wire_roundtrip_with_mean_logprob() {
        let (url, server) = one_shot_server(
            r#"{"choices":[{"message":{"content":"ROUTE: LLM; CONTROL: TERMINATE"},"logprobs":{"content":[{"token":"a","logprob":-0.2},{"token":"b","logprob":-0.4}]}}]}"#,
        );
        let llm = HttpLlm::new(url, "test-model").unwrap();
        let out = llm
            .chat(&ChatCall {
                template_tag: "decide",
                step: 1,
                messages: vec![ChatMessage::user("hello")],
                want_logprobs: true,
            })
            .unwrap();
        assert_eq!(out.content, "ROUTE: LLM; CONTROL: TERMINATE");
        assert!((out.log_prob.unwrap() - (-0.3)).abs() < 1e-12);
        assert_eq!(out.ref_log_prob, None);
        assert_eq!(out.value, None);

        let captured = server.join().unwrap();
        let body_start = captured.find("\r\n\r\n").unwrap() + 4;
        let body: serde_json::Value = serde_json::from_str(&captured[body_start..]).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["logprobs"], true);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "hello");
    }

    #[test]
    fn chat_without_logprobs_leaves_none() {
        let (url, server) = one_shot_server(r#"{"choices":[{"message":{"content":"hi"}}]}"#);
        let llm = HttpLlm::new(url, "m").unwrap();
        let out = llm
            .chat(&ChatCall {
                template_tag: "llm",
                step: 0,
                messages: vec![ChatMessage::user("q")],
                want_logprobs: false,
            })
            .unwrap();
        assert_eq!(out.content, "hi");
        assert_eq!(out.log_prob, None);
        server.join().unwrap();
    }

    #[test]
    fn embed_wire_roundtrip_orders_by_index() {
        let (url, server) = one_shot_server(
            r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#,
        );
        let e = HttpEmbedder::new(url, "embed-model").unwrap();
        let out = e.embed_batch(&["first", "second"]).unwrap();
        assert_eq!(out[0].values(), &[1.0, 0.0]);
        assert_eq!(out[1].values(), &[0.0, 1.0]);

        let captured = server.join().unwrap();
        let body_start = captured.find("\r\n\r\n").unwrap() + 4;
        let body: serde_json::Value = serde_json::from_str(&captured[body_start..]).unwrap();
        assert_eq!(body["input"][0], "first");
        assert_eq!(body["input"][1], "second");
        assert_eq!(body["model"], "embed-model");
    }

    #[test]
    fn transport_failure_is_reported() {
        // Nothing listens on this port (bound then dropped).
        let addr = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap()
        };
        let llm = HttpLlm::new(format!("http://{addr}/v1/chat"), "m").unwrap();
        let err = llm
            .chat(&ChatCall {
                template_tag: "llm",
                step: 0,
                messages: vec![],
                want_logprobs: false,
            })
            .unwrap_err();
        assert!(matches!(err, ProviderError::Transport(_)));
    }
}
