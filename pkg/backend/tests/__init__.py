# duqbench - Tests
