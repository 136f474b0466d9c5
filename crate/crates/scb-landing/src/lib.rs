//! Safe soft-landing guidance for small bodies: gravity models, translational
//! dynamics with control lag, a disturbance observer, a tracking law and a
//! composite control-barrier safety filter.

pub mod dynamics;
pub mod gravity;
pub mod harness;
pub mod num;
pub mod observer;
pub mod reference;
pub mod safety;
pub mod tracking;
