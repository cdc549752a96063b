//! Desk-scale toolkit for generative DNA sequence design.
//!
//! Trains a WGAN-GP generator for fixed-length DNA sequences and tunes
//! sequences toward target properties by gradient-based design in latent
//! space, with an evaluation kit for latent-space and generalization
//! analyses.

pub mod cli;
pub mod designer;
pub mod evalkit;
pub mod gradcore;
pub mod models;
pub mod seqdata;
pub mod training;
