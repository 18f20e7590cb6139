namespace qvi {
}
