//! Core library for a desk-scale tele-immersive session toolkit.
//!
//! The pipeline mirrors a two-party RGB-D telepresence setup: each client
//! segments the user out of its depth feed, tracks the viewpoint, detects
//! collisions between tracked joints and shared virtual objects, and streams
//! compressed frames plus estimates to an authoritative session server that
//! merges and redistributes world state.

pub mod collision;
pub mod geometry;
pub mod netproto;
pub mod params;
pub mod segmentation;
pub mod server;
pub mod sim;
pub mod tracking;
