package strutil
func Up(s string) string { return s + "!" }
