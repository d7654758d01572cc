//! Quiz composition with reinforcement learning.
//!
//! A pool of MCQs (each with one topic and one difficulty level) is turned
//! into a universe of fixed-size quizzes. Agents learn to move between
//! quizzes with four similarity/dissimilarity actions until the current quiz
//! matches a teacher's target topic and difficulty distributions.

pub mod domain;
pub mod datagen;
pub mod agents;
pub mod config;
pub mod approx;
pub mod env;
pub mod harness;
pub mod oracle;
pub mod rng;
