#![allow(dead_code)]

use featforge::data::{Frame, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let d = Normal::new(0.0, 1.0).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

/// y = x1·x2 + ε with ε ~ N(0, σ²); x3 is an unrelated distractor.
pub fn interaction_frame(n: usize, sigma: f64, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x1 = normals(&mut rng, n);
    let x2 = normals(&mut rng, n);
    let x3 = normals(&mut rng, n);
    let eps = normals(&mut rng, n);
    let y = (0..n).map(|i| x1[i] * x2[i] + sigma * eps[i]).collect();
    Frame::from_columns(
        vec![("x1".into(), x1), ("x2".into(), x2), ("x3".into(), x3)],
        y,
        Task::Regression,
    )
    .unwrap()
}

/// Five informative columns `s1..s5` followed by fifteen noise columns
/// `n1..n15`.
pub fn noisy_frame(n: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signal: Vec<Vec<f64>> = (0..5).map(|_| normals(&mut rng, n)).collect();
    let noise: Vec<Vec<f64>> = (0..15).map(|_| normals(&mut rng, n)).collect();
    let eps = normals(&mut rng, n);
    let y = (0..n)
        .map(|i| {
            signal[0][i]
                + signal[1][i] * signal[2][i]
                + signal[3][i].sin() * 2.0
                + 0.5 * signal[4][i].powi(2)
                + 0.1 * eps[i]
        })
        .collect();
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, c) in signal.into_iter().enumerate() {
        cols.push((format!("s{}", i + 1), c));
    }
    for (i, c) in noise.into_iter().enumerate() {
        cols.push((format!("n{}", i + 1), c));
    }
    Frame::from_columns(cols, y, Task::Regression).unwrap()
}

use featforge::llm::{MockReply, MockTransport};
use featforge::memory::AgentRole;

/// Name of the last row of the feature table in a prompt.
pub fn last_listed_feature(prompt: &str) -> Option<String> {
    prompt
        .lines()
        .skip_while(|l| !l.starts_with("Features ("))
        .skip(1)
        .take_while(|l| !l.is_empty())
        .last()
        .and_then(|l| l.split(" | ").next())
        .map(str::to_string)
}

pub const GENERATOR_REPLIES: [&str; 6] = [
    "x1 x2 *",
    "x3 sin",
    "x1 x3 +",
    "x2 square",
    "x1 x2 -",
    "x3 x2 /",
];

/// Well-behaved scripted replies for frames with columns x1, x2, x3.
pub fn scripted_mock() -> MockTransport {
    let routes = ["generation", "generation", "selection"].map(|d| {
        MockReply::text(format!(
            "{{\"decision\": \"{d}\", \"reason\": \"scripted\"}}"
        ))
    });
    MockTransport::new()
        .repeat(AgentRole::Router, routes.to_vec())
        .responder(|role, index, request| match role {
            AgentRole::Generator => MockReply::text(format!(
                "{{\"new_features\": [\"{}\"], \"reason\": \"scripted\"}}",
                GENERATOR_REPLIES[index % GENERATOR_REPLIES.len()]
            )),
            AgentRole::Selector => {
                let name = last_listed_feature(&request.messages[1].content).unwrap_or_default();
                MockReply::text(format!(
                    "{{\"drop\": [\"{name}\"], \"reason\": \"scripted\"}}"
                ))
            }
            AgentRole::Router => MockReply::Http(500),
        })
}

/// The scripted mock with two rate limits and one unparseable reply at
/// the start of the generator's script.
pub fn faulty_mock() -> MockTransport {
    scripted_mock().script(
        AgentRole::Generator,
        vec![
            MockReply::RateLimited,
            MockReply::RateLimited,
            MockReply::text("{\"new_features\": [\"x1 x2 *\"], \"reason\": \"scripted\"}"),
            MockReply::text("I think multiplying things is a great idea!"),
        ],
    )
}
