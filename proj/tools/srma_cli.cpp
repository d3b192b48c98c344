// placeholder; real CLI lands with io-cli module
int main() { return 0; }
