//! Straightforward reference implementations used to check the optimized
//! pipeline, and the acceptance criteria built on them.

pub mod gradcheck;
pub mod oracle;
pub mod segment;
