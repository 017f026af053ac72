"""Test suite for Apple MCP."""