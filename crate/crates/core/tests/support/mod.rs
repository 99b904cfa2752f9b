pub mod oracles;
pub mod reference;
