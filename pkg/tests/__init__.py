# cloudcast test suite
