"""Shipped network specs, loadable by name through core.spec_parser.load_spec."""
