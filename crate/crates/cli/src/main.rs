fn main() {
    let outcome = sarfe_cli::run(std::env::args_os());
    std::process::exit(sarfe_cli::report(&outcome));
}
