// SPDX-License-Identifier: Apache-2.0
//! Cross-modal causal fusion with attention-based front-door adjustment for
//! three-class cognitive status classification, plus an exact discrete
//! structural causal model engine used to check the adjustment formulas.

pub mod analysis;
pub mod frontdoor;
pub mod fusion;
pub mod model;
pub mod nn;
pub mod scm;
pub mod text;
pub mod train;
