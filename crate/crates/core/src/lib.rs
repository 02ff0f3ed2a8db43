//! Simulation and numerical verification toolkit for pure-jump Markov
//! processes: exit distributions, exit times, regular harmonic functions and
//! empirical boundary Harnack constants on arbitrary open sets.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod bhp;
pub mod domains;
pub mod exitstats;
pub mod experiment;
pub mod geometry;
pub mod kernel;
pub mod quadrature;
pub mod rng;
pub mod sampler;
pub mod stats;
