fn main() {
    std::process::exit(crowdscale::cli::main());
}
