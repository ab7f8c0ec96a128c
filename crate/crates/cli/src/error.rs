//! Exit-code classification.

use std::fmt;

/// Marks an error as caused by the user's input or arguments (exit 1).
/// Anything else that escapes a command is an internal failure (exit 2).
#[derive(Debug)]
pub struct UserError(pub String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

pub const EXIT_USER: u8 = 1;
pub const EXIT_INTERNAL: u8 = 2;
pub const EXIT_EXHAUSTED: u8 = 3;

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UserError>().is_some() {
        EXIT_USER
    } else {
        EXIT_INTERNAL
    }
}

/// Attaches a [`UserError`] context to a failure.
pub trait UserContext<T> {
    fn user(self, what: impl Into<String>) -> anyhow::Result<T>;
}

impl<T, E> UserContext<T> for Result<T, E>
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn user(self, what: impl Into<String>) -> anyhow::Result<T> {
        self.map_err(|e| anyhow::Error::new(e).context(UserError(what.into())))
    }
}

/// Fails with a [`UserError`] unless `ok`.
pub fn ensure_user(ok: bool, message: impl Into<String>) -> anyhow::Result<()> {
    if ok {
        Ok(())
    } else {
        Err(anyhow::Error::new(UserError(message.into())))
    }
}
