fn main() {
    std::process::exit(ippo_node::cli::run(std::env::args_os()));
}
