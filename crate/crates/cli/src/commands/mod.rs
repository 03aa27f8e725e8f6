pub mod evaluate;
pub mod fixtures;
pub mod mix;
pub mod separate;
pub mod stats;
pub mod train;
