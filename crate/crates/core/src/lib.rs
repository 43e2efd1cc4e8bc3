//! Closed-loop driving agent harness: a lane-graph micro-simulator whose ego
//! vehicle is driven by a language-model policy through text prompts, an
//! in-context experience buffer, baseline prompting strategies, and a
//! safety/comfort/efficiency evaluator.

pub mod action;
pub mod icrl;
pub mod llm;
pub mod reward;
pub mod road_net;
pub mod runner;
pub mod scene;
pub mod sim;

pub use action::Action;
