package main

import (
	"example.org/greet"
	"github.com/acme/mathx"
	"github.com/acme/strutil"
)

func main() { println(strutil.Up(greet.Hello()), mathx.Add(1, 2)) }
