fn main() {
    std::process::exit(kinship_retrieval::cli::run(std::env::args_os()));
}
