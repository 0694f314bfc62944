//! Command-line interface. Filled in as subcommands land.

use std::ffi::OsString;

pub fn run<I, T>(_args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    eprintln!("pfseq: not yet wired");
    1
}
