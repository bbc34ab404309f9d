# Tests for newtonImbed tool
