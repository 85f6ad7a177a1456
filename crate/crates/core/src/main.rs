fn main() {
    let outcome = zoh_parabolic::cli::main_with_args(std::env::args_os());
    if !outcome.message.is_empty() {
        eprintln!("{}", outcome.message);
    }
    std::process::exit(outcome.code);
}
