pub mod golden;
pub mod malformed;
pub mod oracles;
