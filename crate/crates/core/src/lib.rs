//! Essay scoring toolkit: a bag-of-words logistic-regression baseline, a small
//! transformer-encoder classifier, agreement metrics and a confidence-threshold
//! triage workflow for routing low-confidence machine scores to human raters.
//!
//! The modules mirror the pipeline stages:
//!
//! - [`corpus`]: loading, describing, splitting and synthesizing labeled emails
//! - [`bow`]: stopword removal, stemming, frequency table and sum-score features
//! - [`logreg`]: class-weighted logistic regression trained by gradient descent
//! - [`wordpiece`]: subword vocabulary, greedy longest-match encoding and padding
//! - [`transformer`]: encoder classifier with hand-written backpropagation and Adam
//! - [`metrics`]: confusion matrices, accuracy, F1, ROC AUC and Cohen's kappa
//! - [`triage`]: auto-accept / human-review partitioning by predicted probability
//! - [`cli`]: the `essay-score` command-line front end

pub mod bow;
pub mod class_weights;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod logreg;
pub mod metrics;
pub mod rng;
pub mod transformer;
pub mod triage;
pub mod wordpiece;

pub use class_weights::ClassWeights;
pub use error::{Error, Result};
