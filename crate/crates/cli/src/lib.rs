//! Library side of the `splatspace` command: offline rendering helpers and
//! the scripted headless client.

pub mod offline;
pub mod script;

/// Process exit codes shared by every subcommand.
pub mod exit {
    pub const OK: i32 = 0;
    /// Unreadable or invalid input file, or a render failure.
    pub const FAILURE: i32 = 1;
    /// Bad command line, missing config, or a malformed script.
    pub const USAGE: i32 = 2;
    pub const CONNECTION_REFUSED: i32 = 3;
    pub const EXPECTATION_FAILED: i32 = 4;
    /// The server violated the protocol or closed the connection.
    pub const PROTOCOL: i32 = 5;
}
