pub mod design;
pub mod learn;
pub mod report;
pub mod simulate;
