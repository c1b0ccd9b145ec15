pub mod checkpoint;
pub mod idx;
