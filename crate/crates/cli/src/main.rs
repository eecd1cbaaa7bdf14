fn main() {
    todo!("wired up once the pipeline modules land");
}
