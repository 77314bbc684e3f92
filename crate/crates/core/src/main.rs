fn main() {
    std::process::exit(semcot::run_cli());
}
