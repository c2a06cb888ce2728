fn main() {
    std::process::exit(ctf_prune::cli::main_with_args(std::env::args_os()));
}
