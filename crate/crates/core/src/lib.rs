#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod action;
pub mod engine;
pub mod history;
pub mod ids;
pub mod memory;
pub mod opacity;
pub mod sample;
pub mod scheduler;
pub mod stdlib;
pub mod value;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeDoctests;
