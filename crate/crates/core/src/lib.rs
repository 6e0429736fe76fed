//! Multiple-instance learning over propagation trees.
//!
//! A claim and the posts that respond to it form a bag; the posts are its
//! instances. Only claim veracity labels supervise training. A bank of
//! binary classifiers, one per (veracity, stance) target pair, each runs a
//! recursive tree model with attention over stance probabilities, and a
//! learned attention over the bank regroups their outputs into a veracity
//! distribution for the claim and a stance distribution for every post.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`, which is what training and
//! the gradient checks use.

pub mod autodiff;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evalmetrics;
pub mod gradsuite;
pub mod milbank;
pub mod pipeline;
pub mod scalar;
pub mod training;
pub mod treemodel;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type Graph<'s> = autodiff::Graph<'s, f64>;
pub type ParamStore = autodiff::ParamStore<f64>;
pub type Gradients = autodiff::Gradients<f64>;
pub type Adam = autodiff::Adam<f64>;
pub type Vocabulary = data::Vocabulary<f64>;
pub type BinaryClassifier = milbank::BinaryClassifier<f64>;
pub type ClassifierBank = milbank::ClassifierBank<f64>;
pub type JointPrediction = milbank::JointPrediction<f64>;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type ClassifierBank32 = milbank::ClassifierBank<f32>;
