pub mod address;
pub mod cli;
pub mod codec;
pub mod linda;
pub mod mailbox;
pub mod query;
pub mod router;
pub mod runtime;
pub mod term;
