//! Flow-based congestion monitoring toolkit.
//!
//! Routers summarize traffic as flows and export them as NetFlow v5
//! datagrams; a collector repairs the unreliable transport and persists the
//! flows; analysis turns the record set into load tables and threshold
//! alerts that point at congested elements.
//!
//! - [`wire`]: bit-exact NetFlow v5 codec.
//! - [`exporter`]: flow-cache simulation, trace replay and fault injection.
//! - [`collector`]: sequence-corrected collection, persistence, UDP serving.
//! - [`analysis`]: load tables, bottleneck tracing and alerting.

pub mod analysis;
pub mod collector;
pub mod exporter;
pub mod wire;
