//! Command-line pipeline (placeholder while the crate is scaffolded).

pub fn run(_args: impl Iterator<Item = String>) -> i32 {
    eprintln!("not yet wired");
    1
}
